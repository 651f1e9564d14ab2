"""driveflow: learn steering angle and speed from camera images and LiDAR clouds."""

__version__ = "0.1.0"
