from engine.core.commons import *
from engine.core.tensor import Parameter, Tensor, add, embedding_lookup, layer_norm, matmul


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class Module:
    """
    Parameter container.
    Parameters, child modules and lists of child modules are discovered from
    public attributes in assignment order, which fixes the parameter order
    used by optimizers and checkpoints.
    """

    def named_parameters(self, prefix: str = "") -> dict:
        found = {}
        for attr, value in vars(self).items():
            if attr.startswith("_"):
                continue
            path = f"{prefix}{attr}"
            if isinstance(value, Parameter):
                found[path] = value
            elif isinstance(value, Module):
                found.update(value.named_parameters(path + "."))
            elif isinstance(value, (list, tuple)) and value and all(isinstance(v, Module) for v in value):
                for i, child in enumerate(value):
                    found.update(child.named_parameters(f"{path}.{i}."))
        return found

    def parameters(self) -> list:
        return list(self.named_parameters().values())

    def name_parameters(self) -> None:
        for path, p in self.named_parameters().items():
            p.name = path

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def state_dict(self) -> dict:
        return {name: p.data.copy() for name, p in self.named_parameters().items()}

    def load_state_dict(self, state: dict) -> None:
        params = self.named_parameters()
        missing = set(params) - set(state)
        unexpected = set(state) - set(params)
        if missing or unexpected:
            raise DimensionError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(unexpected)}")
        for name, p in params.items():
            values = np.asarray(state[name], dtype=np.float64)
            if values.shape != p.shape:
                raise DimensionError(f"parameter {name!r}: expected shape {p.shape}, got {values.shape}")
            p.data = values.copy()


class Linear(Module):
    """x @ weight + bias, weight stored (in, out)"""

    def __init__(self, fan_in: int, fan_out: int, rng: np.random.Generator):
        self.weight = Parameter(xavier_uniform(rng, fan_in, fan_out))
        self.bias = Parameter(np.zeros(fan_out))

    def __call__(self, x) -> Tensor:
        return add(matmul(x, self.weight), self.bias)


class LayerNorm(Module):

    def __init__(self, width: int, eps: float = LAYER_NORM_EPS):
        self.gamma = Parameter(np.ones(width))
        self.beta = Parameter(np.zeros(width))
        self._eps = eps

    def __call__(self, x) -> Tensor:
        return layer_norm(x, self.gamma, self.beta, self._eps)


class Embedding(Module):

    def __init__(self, rows: int, width: int, rng: np.random.Generator, std: float = EMBEDDING_INIT_STD):
        self.weight = Parameter(rng.normal(0.0, std, size=(rows, width)))

    def __call__(self, ids) -> Tensor:
        return embedding_lookup(self.weight, ids)
