"""Literature-review coverage evaluation."""
