from laplaceBaseline.mechanism import LaplaceConfig, laplace_inverse_cdf, laplace_anonymize, laplace_noise, sample_laplace
