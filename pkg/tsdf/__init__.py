"""Time Series Data Format: JSON metadata plus raw multiplexed binary sample files."""
