from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Tuple

import numpy as np

from src.diffkit.tensor import Tensor
from src.exception import ContractError, NumericOverflowError
from src.logger import logging

LossFn = Callable[[Dict[str, Tensor]], Tensor]


def _topological_order(root: Tensor) -> List[Tensor]:
    # iterative DFS: unrolled recurrences are deeper than the recursion limit
    order: List[Tensor] = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


@dataclass
class Graph:
    """
    A traced computation: named parameter leaves, every node reachable from
    the loss in topological order, and the scalar loss node itself.
    """
    loss: Tensor
    parameters: Dict[str, Tensor]
    nodes: List[Tensor] = field(default_factory=list)
    unused: List[str] = field(default_factory=list)

    @classmethod
    def trace(cls, loss_fn: LossFn, parameter_values: Mapping[str, np.ndarray]) -> "Graph":
        for name, value in parameter_values.items():
            if not np.all(np.isfinite(value)):
                raise NumericOverflowError(f"parameter:{name}")
        parameters = {
            name: Tensor(np.array(value, dtype=np.float64), op="parameter", name=name)
            for name, value in parameter_values.items()
        }
        loss = loss_fn(parameters)
        if not isinstance(loss, Tensor) or loss.size != 1:
            shape = getattr(loss, "shape", type(loss).__name__)
            raise ContractError(f"loss must be a scalar tensor, got {shape}")

        nodes = _topological_order(loss)
        reachable = {id(n) for n in nodes}
        unused = [name for name, leaf in parameters.items() if id(leaf) not in reachable]
        if unused:
            logging.debug("parameters not reachable from loss: %s", unused)
        return cls(loss=loss, parameters=parameters, nodes=nodes, unused=unused)

    def backward(self) -> Dict[str, np.ndarray]:
        cotangents: Dict[int, np.ndarray] = {id(self.loss): np.ones_like(self.loss.data)}
        for node in reversed(self.nodes):
            g = cotangents.pop(id(node), None)
            if g is None or node.backward_fn is None:
                if node.op == "parameter" and g is not None:
                    cotangents[id(node)] = g
                continue
            for parent, pg in zip(node.parents, node.backward_fn(g)):
                if pg is None:
                    continue
                key = id(parent)
                if key in cotangents:
                    cotangents[key] = cotangents[key] + pg
                else:
                    cotangents[key] = pg

        grads = {}
        for name, leaf in self.parameters.items():
            g = cotangents.get(id(leaf))
            grads[name] = np.zeros_like(leaf.data) if g is None else np.asarray(g, dtype=np.float64).reshape(leaf.shape)
        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise NumericOverflowError(f"grad:{name}")
        return grads


def evaluate(loss_fn: LossFn, parameter_values: Mapping[str, np.ndarray]) -> float:
    """Forward pass only."""
    return Graph.trace(loss_fn, parameter_values).loss.item()


def value_and_grad(loss_fn: LossFn, parameter_values: Mapping[str, np.ndarray]) -> Tuple[float, Dict[str, np.ndarray]]:
    """
    Trace ``loss_fn`` at ``parameter_values`` and return the scalar loss with
    exact reverse-mode gradients for every parameter (zeros for parameters the
    loss does not reach).
    """
    graph = Graph.trace(loss_fn, parameter_values)
    return graph.loss.item(), graph.backward()
