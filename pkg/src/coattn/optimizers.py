"""MADGRAD and Adam optimizers with decoupled weight decay.

MADGRAD is the momentumized dual-averaging method of Defazio & Jelassi: it
accumulates lambda-weighted gradient and squared-gradient sums, takes a dual
step against the cube root of the squared sum, and interpolates toward that
iterate with momentum. Both optimizers apply weight decay decoupled from the
gradient (p <- p * (1 - lr * wd) before the update) and refuse non-finite
gradients outright.
"""

from __future__ import annotations

import math

import torch
from torch.optim import Optimizer


def _check_finite(param: torch.Tensor, name: str) -> None:
    if not torch.isfinite(param.grad).all():
        raise FloatingPointError(f"non-finite gradient for parameter {name}")


class Madgrad(Optimizer):
    """Momentumized, adaptive, dual-averaged gradient method."""

    def __init__(self, params, lr: float = 2e-5, momentum: float = 0.9,
                 weight_decay: float = 0.0, eps: float = 1e-6) -> None:
        if lr <= 0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        if not 0.0 <= momentum < 1.0:
            raise ValueError(f"momentum must be in [0, 1), got {momentum}")
        if weight_decay < 0:
            raise ValueError(f"weight decay must be non-negative, got {weight_decay}")
        defaults = dict(lr=lr, momentum=momentum, weight_decay=weight_decay, eps=eps)
        super().__init__(params, defaults)

    @torch.no_grad()
    def step(self, closure=None):
        loss = None
        if closure is not None:
            with torch.enable_grad():
                loss = closure()

        for group in self.param_groups:
            lr = group["lr"]
            momentum = group["momentum"]
            weight_decay = group["weight_decay"]
            eps = group["eps"]
            for i, p in enumerate(group["params"]):
                if p.grad is None:
                    continue
                _check_finite(p, f"group param {i}")
                state = self.state[p]
                if not state:
                    state["step"] = 0
                    state["grad_sum_sq"] = torch.zeros_like(p)
                    state["grad_sum"] = torch.zeros_like(p)
                    state["x0"] = p.detach().clone()

                if weight_decay != 0:
                    p.mul_(1 - lr * weight_decay)

                k = state["step"]
                lamb = (lr + eps) * math.sqrt(k + 1)
                grad = p.grad
                state["grad_sum_sq"].addcmul_(grad, grad, value=lamb)
                state["grad_sum"].add_(grad, alpha=lamb)
                rms = state["grad_sum_sq"].pow(1.0 / 3.0).add_(eps)
                z = state["x0"] - state["grad_sum"] / rms
                p.mul_(momentum).add_(z, alpha=1 - momentum)
                state["step"] = k + 1
        return loss


class Adam(Optimizer):
    """Adam with bias correction and decoupled weight decay."""

    def __init__(self, params, lr: float = 1e-3, betas: tuple[float, float] = (0.9, 0.999),
                 weight_decay: float = 0.0, eps: float = 1e-8) -> None:
        if lr <= 0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        if not all(0.0 <= b < 1.0 for b in betas):
            raise ValueError(f"betas must be in [0, 1), got {betas}")
        if weight_decay < 0:
            raise ValueError(f"weight decay must be non-negative, got {weight_decay}")
        defaults = dict(lr=lr, betas=betas, weight_decay=weight_decay, eps=eps)
        super().__init__(params, defaults)

    @torch.no_grad()
    def step(self, closure=None):
        loss = None
        if closure is not None:
            with torch.enable_grad():
                loss = closure()

        for group in self.param_groups:
            lr = group["lr"]
            beta1, beta2 = group["betas"]
            weight_decay = group["weight_decay"]
            eps = group["eps"]
            for i, p in enumerate(group["params"]):
                if p.grad is None:
                    continue
                _check_finite(p, f"group param {i}")
                state = self.state[p]
                if not state:
                    state["step"] = 0
                    state["exp_avg"] = torch.zeros_like(p)
                    state["exp_avg_sq"] = torch.zeros_like(p)

                if weight_decay != 0:
                    p.mul_(1 - lr * weight_decay)

                state["step"] += 1
                t = state["step"]
                grad = p.grad
                state["exp_avg"].mul_(beta1).add_(grad, alpha=1 - beta1)
                state["exp_avg_sq"].mul_(beta2).addcmul_(grad, grad, value=1 - beta2)
                m_hat = state["exp_avg"] / (1 - beta1**t)
                v_hat = state["exp_avg_sq"] / (1 - beta2**t)
                p.addcdiv_(m_hat, v_hat.sqrt().add_(eps), value=-lr)
        return loss


def make_optimizer(name: str, params, lr: float, weight_decay: float) -> Optimizer:
    name = name.strip().lower()
    if name == "madgrad":
        return Madgrad(params, lr=lr, weight_decay=weight_decay)
    if name == "adam":
        return Adam(params, lr=lr, weight_decay=weight_decay)
    raise ValueError(f"unknown optimizer {name!r}; expected 'madgrad' or 'adam'")
