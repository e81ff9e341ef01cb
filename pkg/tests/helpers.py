"""Independent oracles and finite-difference utilities shared across tests.

Everything here recomputes expectations from first principles (loops, sets,
finite differences) without touching the library's own fast paths, so a test
comparing the two is a genuine cross-check.
"""

from __future__ import annotations

import numpy as np
import torch

NUM_CLASSES = 4


# -- confusion / offline metrics oracle -------------------------------------


def brute_confusion(preds, gts):
    """Plain-loop one-vs-rest counts."""
    counts = {c: {"tp": 0, "tn": 0, "fp": 0, "fn": 0} for c in range(NUM_CLASSES)}
    for p, g in zip(preds, gts):
        for c in range(NUM_CLASSES):
            if p == c and g == c:
                counts[c]["tp"] += 1
            elif p == c and g != c:
                counts[c]["fp"] += 1
            elif p != c and g == c:
                counts[c]["fn"] += 1
            else:
                counts[c]["tn"] += 1
    return counts


def brute_offline(preds, gts):
    counts = brute_confusion(preds, gts)

    def div(a, b):
        return a / b if b else 0.0

    precisions, recalls, accs = [], [], []
    for c in range(NUM_CLASSES):
        k = counts[c]
        precisions.append(div(k["tp"], k["tp"] + k["fp"]))
        recalls.append(div(k["tp"], k["tp"] + k["fn"]))
        accs.append(div(k["tp"] + k["tn"], k["tp"] + k["tn"] + k["fp"] + k["fn"]))
    precision = sum(precisions) / NUM_CLASSES
    recall = sum(recalls) / NUM_CLASSES
    f1 = div(2 * precision * recall, precision + recall)
    acc = sum(accs) / NUM_CLASSES
    frame_acc = div(sum(1 for p, g in zip(preds, gts) if p == g), len(list(preds)))
    return {"acc": acc, "frame_acc": frame_acc, "precision": precision, "recall": recall, "f1": f1}


def brute_online_prefix(preds, gts, t, fixed_w=None):
    """Recompute the four streaming values from scratch on the prefix [0, t]."""
    preds = np.asarray(preds)[: t + 1]
    gts = np.asarray(gts)[: t + 1]
    k = len(preds)
    correct = int(np.sum(preds == gts))
    wrong = k - correct
    tp = correct
    tn = 3 * correct + 2 * wrong
    fp = wrong
    w = fixed_w if fixed_w is not None else (3 * k) / k if k else 1.0
    ia = (tp + tn) / (k * NUM_CLASSES)
    ip = tp / (tp + fp) if tp + fp else 0.0
    wia = (w * tp + tn / w) / (k * NUM_CLASSES)
    cip = (w * tp) / (w * tp + fp) if w * tp + fp else 0.0
    return ia, ip, wia, cip


# -- finite differences -------------------------------------------------------


def fd_param_check(model, loss_fn, samples_per_tensor=3, h=1e-6, rel_tol=1e-3, seed=0):
    """Central finite differences vs autograd on a sample of every parameter.

    The model is evaluated in double precision and eval mode so the loss is a
    deterministic function of the parameters. Central differences are only a
    valid derivative estimate where the loss is locally smooth; max-pooling
    makes it piecewise linear, so probes whose one-sided differences disagree
    (a kink inside the probe interval) are redrawn. Returns the worst
    relative error found; raises AssertionError naming the offending tensor.
    """
    model = model.double().eval()
    loss = loss_fn(model)
    base = float(loss.detach())
    params = [(n, p) for n, p in model.named_parameters() if p.requires_grad]
    grads = torch.autograd.grad(loss, [p for _, p in params], allow_unused=True)
    rng = np.random.default_rng(seed)
    worst = 0.0
    with torch.no_grad():
        for (name, param), grad in zip(params, grads):
            flat = param.view(-1)
            n = flat.numel()
            checked = 0
            attempts = 0
            seen = set()
            while checked < min(samples_per_tensor, n) and attempts < 8 * samples_per_tensor:
                attempts += 1
                j = int(rng.integers(n))
                if j in seen and len(seen) < n:
                    continue
                seen.add(j)
                orig = float(flat[j])
                step = h * max(1.0, abs(orig))
                flat[j] = orig + step
                hi = float(loss_fn(model))
                flat[j] = orig - step
                lo = float(loss_fn(model))
                flat[j] = orig
                fwd = (hi - base) / step
                bwd = (base - lo) / step
                scale = max(abs(fwd), abs(bwd), 1e-6)
                if abs(fwd - bwd) > 1e-3 * scale:
                    continue  # kink inside the probe interval: estimator invalid
                fd = (hi - lo) / (2 * step)
                an = float(grad.view(-1)[j]) if grad is not None else 0.0
                denom = max(abs(fd), abs(an), 1e-6)
                err = abs(fd - an) / denom
                worst = max(worst, err)
                assert err <= rel_tol, f"{name}[{j}]: analytic {an} vs fd {fd} (rel {err:.2e})"
                checked += 1
            assert checked > 0, f"{name}: no smooth probe point found"
    return worst


@torch.no_grad()
def fd_maps_gradient(head_fn, maps, target_class, h=1e-4):
    """Finite-difference gradient of one logit w.r.t. every feature-map element."""
    maps = maps.detach().double()
    out = torch.zeros_like(maps)
    flat = maps.view(-1)
    grad_flat = out.view(-1)
    for j in range(flat.numel()):
        orig = float(flat[j])
        step = h * max(1.0, abs(orig))
        flat[j] = orig + step
        hi = float(head_fn(maps)[0, target_class])
        flat[j] = orig - step
        lo = float(head_fn(maps)[0, target_class])
        flat[j] = orig
        grad_flat[j] = (hi - lo) / (2 * step)
    return out
