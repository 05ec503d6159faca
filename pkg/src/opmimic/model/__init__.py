"""Diffusion-transformer core: autodiff engine, network, schedule, sampling."""
