# Library modules for Gaussian PSD models, learning and filtering
