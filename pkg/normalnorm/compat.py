"""
The `compat` module provides compatibility wrappers around optional packages.
"""
try:
    from sklearn.metrics import adjusted_mutual_info_score
except ImportError:
    adjusted_mutual_info_score = None

try:
    import threadpoolctl
except ImportError:
    threadpoolctl = None
