from engine.core.commons import *
from engine.core.tensor import Parameter


@dataclass
class AdamState:
    """First/second moment buffers keyed by parameter name, plus the step counter"""
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


def zero_grad(params: Sequence[Parameter]) -> None:
    for p in params:
        p.grad = None


def _require_grads(params, optimizer_name):
    for p in params:
        if p.grad is None:
            raise ContractError(f"{optimizer_name}: parameter {getattr(p, 'name', '?')!r} has no gradient")


def sgd_step(params: Sequence[Parameter], lr: float) -> None:
    """p <- p - lr * grad. Gradients are left untouched."""
    _require_grads(params, "sgd_step")
    for p in params:
        p.data -= lr * p.grad


def adam_step(params: Sequence[Parameter], state: AdamState, lr: float,
              beta1: float = ADAM_BETA1, beta2: float = ADAM_BETA2, eps: float = ADAM_EPS) -> None:
    """Bias-corrected Adam. Moment buffers are created zeroed on first sight of a name."""
    _require_grads(params, "adam_step")
    state.step += 1
    t = state.step
    correction1 = 1.0 - beta1 ** t
    correction2 = 1.0 - beta2 ** t

    for index, p in enumerate(params):
        key = p.name if getattr(p, "name", "") else index
        if key not in state.m:
            state.m[key] = np.zeros_like(p.data)
            state.v[key] = np.zeros_like(p.data)

        state.m[key] = beta1 * state.m[key] + (1.0 - beta1) * p.grad
        state.v[key] = beta2 * state.v[key] + (1.0 - beta2) * (p.grad ** 2)

        m_hat = state.m[key] / correction1
        v_hat = state.v[key] / correction2
        p.data -= lr * m_hat / (np.sqrt(v_hat) + eps)
