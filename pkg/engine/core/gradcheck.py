from engine.core.commons import *
from engine.core.tensor import Tensor


logger = logging.getLogger(__name__)


def _evaluate(f, inputs) -> float:
    out = f(*inputs)
    if out.size != 1:
        raise ContractError(f"grad_check: function must be scalar-valued, got shape {out.shape}")
    return out.item()


def _max_relative_error(f, inputs, step, n_samples, seed) -> float:
    first, second = _evaluate(f, inputs), _evaluate(f, inputs)
    if first != second:
        raise ContractError(f"grad_check: two forward passes differ ({first!r} vs {second!r})")

    f(*inputs).backward()
    analytic = [np.zeros_like(x.data) if x.grad is None else x.grad.copy() for x in inputs]

    rng = make_rng(seed)
    worst = 0.0
    for x, grad in zip(inputs, analytic):
        flat = x.data.reshape(-1)
        if n_samples is None or n_samples >= flat.size:
            positions = range(flat.size)
        else:
            positions = rng.choice(flat.size, size=n_samples, replace=False)

        for i in positions:
            original = flat[i]
            flat[i] = original + step
            upper = _evaluate(f, inputs)
            flat[i] = original - step
            lower = _evaluate(f, inputs)
            flat[i] = original

            numeric = (upper - lower) / (2.0 * step)
            a = grad.reshape(-1)[i]
            error = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
            worst = max(worst, error)
    return worst


def grad_check(f: Callable, inputs: Sequence[Tensor], step: float = 1e-5,
               n_samples: Optional[int] = None, seed: int = 0) -> float:
    """
    Compares reverse-mode gradients of a scalar function with central differences.

    ``f`` is called as ``f(*inputs)``; every input is perturbed in place and
    restored, and its ``requires_grad`` flag and gradient are put back on exit.
    With ``n_samples`` only that many randomly chosen elements per input are
    probed. Returns the maximum over probed elements of
    |g_analytic - g_numeric| / max(1, |g_analytic|, |g_numeric|).
    """
    inputs = list(inputs)
    saved = [(x.requires_grad, x.grad) for x in inputs]
    for x in inputs:
        x.data = np.ascontiguousarray(x.data)
        x.requires_grad = True
        x.grad = None

    try:
        worst = _max_relative_error(f, inputs, step, n_samples, seed)
    finally:
        for x, (flag, grad) in zip(inputs, saved):
            x.requires_grad = flag
            x.grad = grad
    logger.debug("grad_check max relative error %.3e", worst)
    return worst
