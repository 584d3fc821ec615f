"""Channel-recurrent VAE family on a minimal autodiff core."""
__version__ = "0.1.0"
