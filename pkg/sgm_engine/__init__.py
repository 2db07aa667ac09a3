"""Noise schedule, denoising score-matching training and reverse-SDE sampling."""
