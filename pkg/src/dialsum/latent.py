"""Customer/agent latent spaces: posteriors, conditional prior, sampling and KL."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn


@dataclass
class GaussianParams:
    """Diagonal Gaussian parameterized by mean and log-variance."""

    mean: torch.Tensor
    log_variance: torch.Tensor

    @property
    def variance(self) -> torch.Tensor:
        return self.log_variance.exp()

    @classmethod
    def standard(cls, like: torch.Tensor) -> "GaussianParams":
        return cls(torch.zeros_like(like), torch.zeros_like(like))


def _check_dim(t: torch.Tensor, dim: int, what: str):
    if t.shape[-1] != dim:
        raise ValueError(f"{what} has dim {t.shape[-1]}, expected {dim}")


class GaussianProjection(nn.Module):
    """Two independent affine maps producing mean and log-variance."""

    def __init__(self, in_dim: int, latent_dim: int):
        super().__init__()
        self.in_dim = in_dim
        self.mean = nn.Linear(in_dim, latent_dim)
        self.log_variance = nn.Linear(in_dim, latent_dim)

    def forward(self, h: torch.Tensor) -> GaussianParams:
        _check_dim(h, self.in_dim, "posterior input")
        return GaussianParams(self.mean(h), self.log_variance(h))


class ConditionalPrior(nn.Module):
    """p(z_y | z_x): two one-hidden-layer tanh MLPs for mean and log-variance."""

    def __init__(self, latent_dim: int, hidden: int):
        super().__init__()
        self.latent_dim = latent_dim
        self.mean = nn.Sequential(nn.Linear(latent_dim, hidden), nn.Tanh(), nn.Linear(hidden, latent_dim))
        self.log_variance = nn.Sequential(nn.Linear(latent_dim, hidden), nn.Tanh(), nn.Linear(hidden, latent_dim))

    def forward(self, z_x: torch.Tensor) -> GaussianParams:
        _check_dim(z_x, self.latent_dim, "z_x")
        return GaussianParams(self.mean(z_x), self.log_variance(z_x))


class LatentSpaces(nn.Module):
    def __init__(self, customer_dim: int, agent_dim: int, latent_dim: int = 300, prior_hidden: int = 600):
        super().__init__()
        self.latent_dim = latent_dim
        self.customer_posterior = GaussianProjection(customer_dim, latent_dim)
        self.agent_posterior = GaussianProjection(agent_dim + latent_dim, latent_dim)
        self.agent_prior = ConditionalPrior(latent_dim, prior_hidden)

    def posterior_customer(self, e_x: torch.Tensor) -> GaussianParams:
        return self.customer_posterior(e_x)

    def posterior_agent(self, e_y: torch.Tensor, z_x: torch.Tensor) -> GaussianParams:
        _check_dim(z_x, self.latent_dim, "z_x")
        return self.agent_posterior(torch.cat([e_y, z_x], dim=-1))

    def prior_agent(self, z_x: torch.Tensor) -> GaussianParams:
        return self.agent_prior(z_x)


def reparameterize(g: GaussianParams, noise: torch.Tensor) -> torch.Tensor:
    if noise.shape[-1] != g.mean.shape[-1]:
        raise ValueError("noise dim must equal latent dim")
    return g.mean + torch.exp(0.5 * g.log_variance) * noise


def kl_divergence(q: GaussianParams, p: GaussianParams) -> torch.Tensor:
    """KL(q || p) in nats for diagonal Gaussians, summed over the last dim."""
    if q.mean.shape[-1] != p.mean.shape[-1]:
        raise ValueError("KL between Gaussians of different dims")
    diff = q.mean - p.mean
    terms = p.log_variance - q.log_variance + (q.log_variance.exp() + diff * diff) / p.log_variance.exp() - 1.0
    return 0.5 * terms.sum(dim=-1)
