"""Sample-quality metrics: unbiased MMD², exact DTW and FastDTW."""
