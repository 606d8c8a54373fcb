"""Neural-network operator kernel."""
