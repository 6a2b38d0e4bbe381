"""Shared test utilities: fixed model inputs and the central finite-difference
gradient oracle used to verify autograd end to end.

Two FD evaluators: a plain per-element loop (`fd_grad_for_param`), and a
batched evaluator (`fd_grad_batched`) that computes the same central
differences for whole parameter tensors by vmapping the loss over a batch of
perturbed parameter copies; the two are cross-checked against each other in
the unit tests."""

import numpy as np
import torch
from torch import nn
from torch.func import functional_call, vmap

from voxseg.flow import cfm_loss_tensor
from voxseg.model import (
    TASK_FULL,
    TASK_GUIDED,
    TASK_INTERACTIVE,
    PointPrompt,
    TaskCondition,
    VelocityTransformer,
)
from voxseg.shapes import GuidanceMap


def sorted_coords(rng, resolution, n):
    flat = rng.choice(resolution**3, size=n, replace=False)
    coords = np.stack(np.unravel_index(flat, (resolution,) * 3), axis=1).astype(np.int64)
    order = np.lexsort((coords[:, 2], coords[:, 1], coords[:, 0]))
    return coords[order]


def random_guidance(rng, size=16, view="+z"):
    colors = rng.uniform(-1, 1, size=(size, size, 3)).astype(np.float32)
    background = rng.random((size, size)) < 0.5
    colors[background] = 0.0
    return GuidanceMap(width=size, height=size, colors=colors, background=background, view=view)


def condition_for(task: int, rng, guidance_size=16):
    if task == TASK_INTERACTIVE:
        return TaskCondition(TASK_INTERACTIVE, prompt=PointPrompt(points=rng.random((3, 3))))
    if task == TASK_FULL:
        return TaskCondition(TASK_FULL)
    return TaskCondition(TASK_GUIDED, guidance=random_guidance(rng, guidance_size))


class LossCase(nn.Module):
    """One fixed training sample wrapped as loss = f(parameters).

    Condition tensors are rebuilt inside forward so that perturbations of the
    point-feature and guidance-embedding parameters reach the loss; wrapping
    everything in a module makes the whole pipeline addressable through
    torch.func.functional_call.
    """

    def __init__(self, model: VelocityTransformer, task: int, n_voxels: int,
                 seed: int, resolution: int, guidance_size: int, t: float):
        super().__init__()
        self.model = model
        rng = np.random.default_rng(seed)
        dtype = model.dtype
        d_lat = model.config.d_latent
        self.coords = torch.from_numpy(sorted_coords(rng, resolution, n_voxels))
        self.y = torch.tensor(rng.uniform(-1, 1, size=(n_voxels, d_lat)), dtype=dtype)
        self.z = torch.tensor(rng.uniform(-1, 1, size=(n_voxels, d_lat)), dtype=dtype)
        self.eps = torch.tensor(rng.normal(size=(n_voxels, d_lat)), dtype=dtype)
        self.t = t
        self.y_t = (1.0 - t) * self.y + t * self.eps
        self.cond = condition_for(task, rng, guidance_size)
        self.resolution = resolution

    def forward(self) -> torch.Tensor:
        tokens, guidance = self.model.condition_tensors(self.cond)
        v_hat = self.model(
            self.y_t, self.z, self.coords, self.t, self.cond.task, tokens, guidance,
            latent_resolution=self.resolution,
        )
        return cfm_loss_tensor(v_hat, self.y, self.eps, self.t)


def make_loss_case(
    model: VelocityTransformer,
    task: int,
    n_voxels: int = 20,
    seed: int = 0,
    resolution: int = 16,
    guidance_size: int = 16,
    t: float = 0.37,
) -> LossCase:
    return LossCase(model, task, n_voxels, seed, resolution, guidance_size, t)


def analytic_grads(model, loss_fn) -> dict:
    model.zero_grad(set_to_none=True)
    loss_fn().backward()
    return {
        name: (None if p.grad is None else p.grad.detach().clone())
        for name, p in model.named_parameters()
    }


def fd_grad_for_param(param: torch.nn.Parameter, loss_fn, h: float = 1e-5) -> torch.Tensor:
    """Central finite differences for every element of one parameter tensor."""
    flat = param.data.view(-1)
    grads = torch.zeros_like(flat)
    with torch.no_grad():
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + h
            up = float(loss_fn())
            flat[i] = orig - h
            down = float(loss_fn())
            flat[i] = orig
            grads[i] = (up - down) / (2.0 * h)
    return grads.view(param.shape)


def fd_grad_batched(case: LossCase, param_name: str, h: float = 1e-5, chunk: int = 512) -> torch.Tensor:
    """The same central differences as fd_grad_for_param, but evaluated for a
    whole parameter tensor at once: the loss is vmapped over a batch of
    perturbed parameter copies (one +/-h pair per element)."""
    base = {name: p.detach() for name, p in case.named_parameters()}
    key = f"model.{param_name}"
    theta = base[key]
    flat = theta.reshape(-1)
    k = flat.numel()
    grads = torch.zeros(k, dtype=theta.dtype)

    def loss_with(perturbed):
        return functional_call(case, {**base, key: perturbed.reshape(theta.shape)}, ())

    batched = vmap(loss_with)
    with torch.no_grad():
        for start in range(0, k, chunk):
            idx = torch.arange(start, min(start + chunk, k))
            rows = torch.arange(len(idx))
            up = flat.repeat(len(idx), 1)
            up[rows, idx] += h
            down = flat.repeat(len(idx), 1)
            down[rows, idx] -= h
            grads[idx] = (batched(up) - batched(down)) / (2.0 * h)
    return grads.reshape(theta.shape)


def grad_check_ratio(
    analytic: torch.Tensor, numeric: torch.Tensor, rtol: float, atol: float
) -> float:
    """Worst-case |a - n| / (atol + rtol * max(|a|, |n|)); passes iff <= 1.

    The atol floor absorbs the finite-difference noise floor (~1e-11 absolute
    at float64 with h = 1e-5) on near-zero gradient entries.
    """
    if analytic is None:  # parameter unreachable from the loss: gradient is zero
        analytic = torch.zeros_like(numeric)
    bound = atol + rtol * torch.maximum(analytic.abs(), numeric.abs())
    return float(((analytic - numeric).abs() / bound).max())
