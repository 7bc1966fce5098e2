"""The four sequence-transduction architectures.

* ``baseline``: attentional encoder-decoder with Luong (general) attention
  and input feeding.
* ``ntm-attention``: the baseline with attention weights computed by the
  NTM pipeline (content, interpolate, shift, sharpen) over the source.
* ``mad``: the baseline whose decoder is an NTM controller with its own
  external memory, keeping one Luong read head into the source.
* ``pure-mann``: a single NTM controller that reads the source, an EOS
  token, and then emits the target.

All computation is batched. Parameters live in ``Model.params`` as plain
arrays; each forward pass wraps them in fresh :class:`Value` leaves, so
concurrent episodes never share mutable state.
"""

from __future__ import annotations

import dataclasses
import re
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import attention as attn
from . import memory as mem
from .autodiff import Value, as_value, lstm_parameters, lstm_stack_step, ops, zero_states
from .autodiff.lstm import init_uniform
from .data import EOS, PAD, SOS, Batch
from .errors import ContractViolation

ARCHITECTURES = ("baseline", "ntm-attention", "mad", "pure-mann")
_RECURRENT_NAME = re.compile(r"^(?:enc_fwd|enc_bwd|dec|ctrl)\d+_([Wb])$")


@dataclass
class ModelConfig:
    architecture: str
    source_vocab_size: int
    target_vocab_size: int
    embedding_size: int = 32
    hidden_size: int = 64
    layers: int = 1
    memory_locations: int = 16
    memory_width: int = 16
    read_heads: int = 1
    write_heads: int = 1
    bidirectional: Optional[bool] = None  # None: True for encoder-decoders, False for pure-mann
    dropout: float = 0.3

    def __post_init__(self):
        if self.bidirectional is None:
            self.bidirectional = self.architecture != "pure-mann"
        self.validate()

    def validate(self) -> None:
        if self.architecture not in ARCHITECTURES:
            raise ContractViolation(f"architecture must be one of {ARCHITECTURES}, got {self.architecture!r}")
        for name in ("source_vocab_size", "target_vocab_size", "embedding_size", "hidden_size", "layers",
                     "memory_locations", "memory_width"):
            if getattr(self, name) < 1:
                raise ContractViolation(f"{name} must be at least 1")
        if self.read_heads < 0 or self.write_heads < 0:
            raise ContractViolation("head counts must be nonnegative")
        if self.architecture in ("mad", "pure-mann") and self.read_heads + self.write_heads == 0:
            raise ContractViolation(f"{self.architecture} needs at least one memory head")
        if not 0.0 <= self.dropout < 1.0:
            raise ContractViolation(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.architecture == "pure-mann" and self.bidirectional:
            raise ContractViolation("pure-mann has no separate encoder and cannot be bidirectional")

    @property
    def uses_memory(self) -> bool:
        return self.architecture in ("mad", "pure-mann")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class EpisodeState:
    """Everything one decoding episode carries between steps."""

    params: dict
    controller: list  # (h, c) per layer
    training: bool = False
    rng: Optional[np.random.Generator] = None
    record: bool = False
    encoded: bool = False
    memory: Optional[Value] = None
    read_vectors: list = field(default_factory=list)
    head_weights: list = field(default_factory=list)  # previous address per memory head
    source: Optional[attn.EncodedSource] = None
    attention: Optional[attn.AttentionState] = None
    feed: Optional[Value] = None  # attentional hidden state fed to the next decoder input
    trace: list = field(default_factory=list)  # per step: {"phase": str, "heads": [record, ...]}
    forced_heads: dict = field(default_factory=dict)  # (kind, index) -> {parameter name: value}

    @property
    def batch_size(self) -> int:
        return self.controller[0][0].shape[0]

    def take(self, index) -> "EpisodeState":
        """Rows ``index`` of every batched quantity, detached from any graph."""
        pick = lambda v: None if v is None else Value(as_value(v).data[index])  # noqa: E731
        return dataclasses.replace(
            self,
            controller=[(pick(h), pick(c)) for h, c in self.controller],
            memory=pick(self.memory),
            read_vectors=[pick(r) for r in self.read_vectors],
            head_weights=[pick(w) for w in self.head_weights],
            source=None if self.source is None else self.source.take(index),
            attention=None if self.attention is None else attn.AttentionState(pick(self.attention.previous), self.attention.W_a),
            feed=pick(self.feed),
            trace=[],
        )


def _linear(x, W, b=None) -> Value:
    out = ops.matmul(x, W)
    return out if b is None else ops.add(out, b)


def _hold(new, old, active: Optional[np.ndarray]):
    """Keep ``old`` for rows whose sequence has not started or has already ended."""
    if active is None:
        return new
    shape = (active.shape[0],) + (1,) * (new.ndim - 1)
    m = active.astype(np.float64).reshape(shape)
    return ops.add(ops.mul(new, m), ops.mul(old, 1.0 - m))


def _as_batch(source, source_lengths=None) -> tuple:
    source = np.asarray(source, dtype=np.int64)
    if source.ndim == 1:
        source = source[None, :]
    if source_lengths is None:
        source_lengths = np.full(source.shape[0], source.shape[1])
    return source, np.asarray(source_lengths, dtype=np.int64)


def _record(kind, index, weights, content, head: mem.HeadParameters) -> dict:
    return {
        "kind": kind,
        "index": index,
        "w": weights.data.copy(),
        "w_c": content.data.copy(),
        "g": head.gate.data.copy(),
        "s": head.shift.data.copy(),
        "beta": as_value(head.beta).data.copy(),
        "gamma": head.gamma.data.copy(),
    }


class Model:
    """Shared machinery; concrete architectures override the hooks below."""

    def __init__(self, config: ModelConfig, params: Optional[dict] = None, seed: int = 0):
        self.config = config
        self.params = params if params is not None else self.init_params(np.random.default_rng(seed))

    # -- parameters -----------------------------------------------------------
    def init_params(self, rng: np.random.Generator) -> dict:
        raise NotImplementedError

    def bind(self, requires_grad: bool = False) -> dict:
        return {name: Value(array, requires_grad=requires_grad) for name, array in self.params.items()}

    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def recurrent_parameter_count(self) -> int:
        """Hidden-to-hidden weights and biases summed over every recurrent stack."""
        hidden = self.config.hidden_size
        total = 0
        for name, array in self.params.items():
            match = _RECURRENT_NAME.match(name)
            if match and match.group(1) == "W":
                total += hidden * array.shape[1]
            elif match:
                total += array.size
        return total

    def copy(self) -> "Model":
        return type(self)(self.config, {k: v.copy() for k, v in self.params.items()})

    # -- episode --------------------------------------------------------------
    def encode(self, source, source_lengths=None, params=None, training=False, rng=None, record=False) -> EpisodeState:
        source, lengths = _as_batch(source, source_lengths)
        if source.shape[1] == 0 or lengths.min() < 1:
            raise ContractViolation("encode: every source sentence needs at least one token")
        valid = np.arange(source.shape[1])[None, :] < lengths[:, None]
        if source[valid].min() < 0 or source[valid].max() >= self.config.source_vocab_size:
            raise ContractViolation("encode: source id outside the source vocabulary")
        if training and self.config.dropout > 0 and rng is None:
            raise ContractViolation("encode: training with dropout needs an rng")
        params = params if params is not None else self.bind()
        return self._encode(source, lengths, params, training, rng, record)

    def decode_step(self, state: Optional[EpisodeState], previous_tokens) -> tuple:
        if state is None or not state.encoded:
            raise ContractViolation("decode_step: call encode before decoding")
        prev = np.asarray(previous_tokens, dtype=np.int64).reshape(-1)
        if prev.shape[0] != state.batch_size:
            raise ContractViolation(f"decode_step: {prev.shape[0]} tokens for batch of {state.batch_size}")
        if prev.min() < 0 or prev.max() >= self.config.target_vocab_size:
            raise ContractViolation("decode_step: token outside the target vocabulary")
        return self._decode_step(state, prev)

    def _encode(self, source, lengths, params, training, rng, record) -> EpisodeState:
        raise NotImplementedError

    def _decode_step(self, state: EpisodeState, prev: np.ndarray) -> tuple:
        raise NotImplementedError

    def sequence_loss(self, source, target, source_lengths=None, target_lengths=None,
                      params=None, training=False, rng=None) -> Value:
        """Mean per-token cross-entropy under teacher forcing."""
        source, source_lengths = _as_batch(source, source_lengths)
        target, target_lengths = _as_batch(target, target_lengths)
        if target.shape[1] == 0 or target_lengths.min() < 1:
            raise ContractViolation("sequence_loss: empty target")
        last = target[np.arange(target.shape[0]), target_lengths - 1]
        if np.any(last != EOS):
            raise ContractViolation("sequence_loss: every target must end with EOS")
        state = self.encode(source, source_lengths, params=params, training=training, rng=rng)
        prev = np.full(target.shape[0], SOS)
        total = None
        for t in range(target.shape[1]):
            logits, state = self.decode_step(state, prev)
            weights = (t < target_lengths).astype(np.float64)
            step = ops.cross_entropy(logits, np.where(weights > 0, target[:, t], PAD), weights)
            total = step if total is None else ops.add(total, step)
            prev = np.where(weights > 0, target[:, t], PAD)
        return ops.div(total, float(target_lengths.sum()))

    def batch_loss(self, batch: Batch, params=None, training=False, rng=None) -> Value:
        return self.sequence_loss(batch.source, batch.target, batch.source_lengths, batch.target_lengths,
                                  params=params, training=training, rng=rng)

    # -- shared pieces ----------------------------------------------------------
    def _stack(self, params, prefix, depth) -> list:
        return [(params[f"{prefix}{l}_W"], params[f"{prefix}{l}_b"]) for l in range(depth)]

    def _memory_init_params(self, rng, params: dict) -> None:
        c = self.config
        total = sum(mem.head_parameter_size(c.memory_width, False) for _ in range(c.read_heads))
        total += sum(mem.head_parameter_size(c.memory_width, True) for _ in range(c.write_heads))
        params["head_W"] = init_uniform(rng, (c.hidden_size, total))
        params["head_b"] = np.zeros(total)
        params["mem_bias"] = np.zeros(c.memory_width)
        for i in range(c.read_heads + c.write_heads):
            params[f"w0_{i}"] = mem.initial_weight_logits(c.memory_locations)

    def _memory_start(self, params, batch) -> dict:
        c = self.config
        return {
            "memory": mem.initial_memory(params["mem_bias"], batch, c.memory_locations),
            "read_vectors": [Value(np.zeros((batch, c.memory_width))) for _ in range(c.read_heads)],
            "head_weights": [mem.initial_weights(params[f"w0_{i}"], batch)
                             for i in range(c.read_heads + c.write_heads)],
        }

    def _memory_heads(self, h, state: EpisodeState, records: list) -> tuple:
        """Address every head on the current memory, read, then apply the writes in order."""
        c, P = self.config, state.params
        raw = _linear(h, P["head_W"], P["head_b"])
        heads, offset = [], 0
        for i in range(c.read_heads + c.write_heads):
            write = i >= c.read_heads
            size = mem.head_parameter_size(c.memory_width, write)
            head = mem.squash_head(raw[:, offset: offset + size], c.memory_width, write)
            kind, index = ("write", i - c.read_heads) if write else ("read", i)
            for name, forced in state.forced_heads.get((kind, index), {}).items():
                setattr(head, name, Value(np.broadcast_to(forced, getattr(head, name).shape).copy()))
            heads.append((kind, index, head))
            offset += size
        memory = state.memory
        addresses = [mem.address(head, memory, state.head_weights[i]) for i, (_, _, head) in enumerate(heads)]
        reads = [mem.read(memory, a.weights) for (kind, _, _), a in zip(heads, addresses) if kind == "read"]
        for (kind, _, head), a in zip(heads, addresses):
            if kind == "write":
                memory = mem.write(memory, a.weights, head.erase, head.add)
        if state.record:
            records.extend(_record(kind, index, a.weights, a.content, head)
                           for (kind, index, head), a in zip(heads, addresses))
        return reads, memory, [a.weights for a in addresses]

    def _output(self, features, P, state: EpisodeState) -> Value:
        features = ops.dropout(features, self.config.dropout, state.rng, state.training)
        return _linear(features, P["out_W"], P["out_b"])


class EncoderDecoder(Model):
    """Bidirectional (optionally) LSTM encoder with a Luong-attention LSTM decoder."""

    def decoder_input_size(self) -> int:
        c = self.config
        return c.embedding_size + c.hidden_size

    def attentional_input_size(self) -> int:
        return 2 * self.config.hidden_size

    def init_params(self, rng):
        c = self.config
        H, E = c.hidden_size, c.embedding_size
        p = {
            "src_emb": init_uniform(rng, (c.source_vocab_size, E)),
            "tgt_emb": init_uniform(rng, (c.target_vocab_size, E)),
        }
        directions = ("enc_fwd", "enc_bwd") if c.bidirectional else ("enc_fwd",)
        for prefix in directions:
            for l in range(c.layers):
                cell = lstm_parameters(rng, E if l == 0 else H, H)
                p[f"{prefix}{l}_W"], p[f"{prefix}{l}_b"] = cell["W"], cell["b"]
        if c.bidirectional:
            p["enc_proj_W"] = init_uniform(rng, (2 * H, H))
            p["bridge_W"] = init_uniform(rng, (2 * H, H))
        for l in range(c.layers):
            cell = lstm_parameters(rng, self.decoder_input_size() if l == 0 else H, H)
            p[f"dec{l}_W"], p[f"dec{l}_b"] = cell["W"], cell["b"]
        p["attn_Wa"] = init_uniform(rng, (H, H))
        p["comb_W"] = init_uniform(rng, (self.attentional_input_size(), H))
        p["comb_b"] = np.zeros(H)
        p["out_W"] = init_uniform(rng, (H, c.target_vocab_size))
        p["out_b"] = np.zeros(c.target_vocab_size)
        self._extra_params(rng, p)
        return p

    def _extra_params(self, rng, params) -> None:
        pass

    def _run_direction(self, source, lengths, P, prefix, reverse, training, rng):
        c = self.config
        B, S = source.shape
        layers = self._stack(P, prefix, c.layers)
        states = zero_states(B, c.hidden_size, c.layers)
        outputs = [None] * S
        steps = range(S - 1, -1, -1) if reverse else range(S)
        for t in steps:
            x = ops.embedding(P["src_emb"], source[:, t])
            top, new_states = lstm_stack_step(x, states, layers, c.dropout, rng, training)
            active = t < lengths
            if active.all():
                states = new_states
            else:
                states = [(_hold(hn, h, active), _hold(cn, cc, active)) for (hn, cn), (h, cc) in zip(new_states, states)]
            outputs[t] = top
        return outputs, states

    def _encode(self, source, lengths, P, training, rng, record):
        c = self.config
        fwd, fwd_final = self._run_direction(source, lengths, P, "enc_fwd", False, training, rng)
        if c.bidirectional:
            bwd, bwd_final = self._run_direction(source, lengths, P, "enc_bwd", True, training, rng)
            states = ops.stack([ops.concat([f, b]) for f, b in zip(fwd, bwd)], axis=1)
            states = ops.matmul(states, P["enc_proj_W"])
            controller = [
                (_linear(ops.concat([hf, hb]), P["bridge_W"]), _linear(ops.concat([cf, cb]), P["bridge_W"]))
                for (hf, cf), (hb, cb) in zip(fwd_final, bwd_final)
            ]
        else:
            states = ops.stack(fwd, axis=1)
            controller = fwd_final
        source_enc = attn.EncodedSource(states, lengths)
        B = source.shape[0]
        state = EpisodeState(
            params=P,
            controller=controller,
            training=training,
            rng=rng,
            record=record,
            encoded=True,
            source=source_enc,
            attention=attn.AttentionState(attn.initial_attention_weights(source_enc), P["attn_Wa"]),
            feed=Value(np.zeros((B, c.hidden_size))),
        )
        self._decoder_start(state)
        return state

    def _decoder_start(self, state: EpisodeState) -> None:
        pass

    def _attend(self, h, state: EpisodeState, records: list) -> tuple:
        P = state.params
        w = attn.luong_weights(h, state.source, 1.0, P["attn_Wa"])
        if state.record:
            B = w.shape[0]
            records.append({
                "kind": "attention", "index": 0, "w": w.data.copy(), "w_c": w.data.copy(),
                "g": np.ones((B, 1)), "s": attn.identity_kernel(B), "beta": np.ones((B, 1)), "gamma": np.ones((B, 1)),
            })
        return attn.context(w, state.source), attn.AttentionState(w, state.attention.W_a)

    def _decoder_inputs(self, emb, state: EpisodeState) -> list:
        return [emb, state.feed]

    def _decode_step(self, state, prev):
        c, P = self.config, state.params
        emb = ops.embedding(P["tgt_emb"], prev)
        x = ops.concat(self._decoder_inputs(emb, state))
        h, controller = lstm_stack_step(x, state.controller, self._stack(P, "dec", c.layers),
                                        c.dropout, state.rng, state.training)
        records: list = []
        ctx, attention = self._attend(h, state, records)
        extra = self._after_attention(h, state, records)
        combined = ops.tanh(_linear(ops.concat([h, ctx] + extra.get("features", [])), P["comb_W"], P["comb_b"]))
        logits = self._output(combined, P, state)
        trace = state.trace + [{"phase": "decoding", "heads": records}] if state.record else state.trace
        new_state = dataclasses.replace(state, controller=controller, attention=attention, feed=combined,
                                        trace=trace, **extra.get("state", {}))
        return logits, new_state

    def _after_attention(self, h, state, records) -> dict:
        return {}


class BaselineModel(EncoderDecoder):
    pass


class NTMAttentionModel(EncoderDecoder):
    def _extra_params(self, rng, params):
        params["attn_head_W"] = init_uniform(rng, (self.config.hidden_size, attn.ATTENTION_HEAD_SIZE))
        params["attn_head_b"] = np.zeros(attn.ATTENTION_HEAD_SIZE)

    def _attend(self, h, state, records):
        P = state.params
        head = attn.squash_attention_head(_linear(h, P["attn_head_W"], P["attn_head_b"]))
        for name, forced in state.forced_heads.get(("attention", 0), {}).items():
            setattr(head, name, Value(np.broadcast_to(forced, getattr(head, name).shape).copy()))
        result = attn.ntm_style_attention(h, state.source, head, state.attention)
        if state.record:
            records.append(_record("attention", 0, result.weights, result.content, head))
        return result.context, result.state


class MADModel(EncoderDecoder):
    """Decoder with a Luong read into the source plus NTM read/write heads into its own memory.

    Per step: controller, source attention, memory reads, memory writes.
    Reads feed both the output layer and the next controller input.
    """

    def decoder_input_size(self):
        c = self.config
        return c.embedding_size + c.hidden_size + c.read_heads * c.memory_width

    def attentional_input_size(self):
        c = self.config
        return 2 * c.hidden_size + c.read_heads * c.memory_width

    def _extra_params(self, rng, params):
        self._memory_init_params(rng, params)

    def _decoder_start(self, state):
        for name, value in self._memory_start(state.params, state.batch_size).items():
            setattr(state, name, value)

    def _decoder_inputs(self, emb, state):
        return [emb, state.feed] + list(state.read_vectors)

    def _after_attention(self, h, state, records):
        reads, memory, weights = self._memory_heads(h, state, records)
        return {"features": reads,
                "state": {"memory": memory, "read_vectors": reads, "head_weights": weights}}


class PureMANNModel(Model):
    """One NTM whose LSTM controller sees the source, EOS, then produces the target."""

    def init_params(self, rng):
        c = self.config
        H, E = c.hidden_size, c.embedding_size
        p = {
            "src_emb": init_uniform(rng, (c.source_vocab_size, E)),
            "tgt_emb": init_uniform(rng, (c.target_vocab_size, E)),
        }
        for l in range(c.layers):
            cell = lstm_parameters(rng, E + c.read_heads * c.memory_width if l == 0 else H, H)
            p[f"ctrl{l}_W"], p[f"ctrl{l}_b"] = cell["W"], cell["b"]
        self._memory_init_params(rng, p)
        p["out_W"] = init_uniform(rng, (H + c.read_heads * c.memory_width, c.target_vocab_size))
        p["out_b"] = np.zeros(c.target_vocab_size)
        return p

    def _step(self, x, state: EpisodeState, phase: str, active: Optional[np.ndarray] = None) -> tuple:
        c, P = self.config, state.params
        inp = ops.concat([x] + list(state.read_vectors))
        h, controller = lstm_stack_step(inp, state.controller, self._stack(P, "ctrl", c.layers),
                                        c.dropout, state.rng, state.training)
        records: list = []
        reads, memory, weights = self._memory_heads(h, state, records)
        if active is not None and not active.all():
            controller = [(_hold(hn, h0, active), _hold(cn, c0, active))
                          for (hn, cn), (h0, c0) in zip(controller, state.controller)]
            memory = _hold(memory, state.memory, active)
            reads = [_hold(r, r0, active) for r, r0 in zip(reads, state.read_vectors)]
            weights = [_hold(w, w0, active) for w, w0 in zip(weights, state.head_weights)]
        trace = state.trace + [{"phase": phase, "heads": records}] if state.record else state.trace
        new_state = dataclasses.replace(state, controller=controller, memory=memory, read_vectors=reads,
                                        head_weights=weights, trace=trace)
        return h, reads, new_state

    def _encode(self, source, lengths, P, training, rng, record):
        c = self.config
        B = source.shape[0]
        # Sources lacking a final EOS get one appended.
        rows = []
        for b in range(B):
            seq = list(source[b, : lengths[b]])
            if seq[-1] != EOS:
                seq.append(EOS)
            rows.append(seq)
        lengths = np.array([len(r) for r in rows])
        S = int(lengths.max())
        # Left-pad so every sentence reaches its EOS on the same step.
        aligned = np.full((B, S), PAD, dtype=np.int64)
        for b, seq in enumerate(rows):
            aligned[b, S - len(seq):] = seq
        state = EpisodeState(params=P, controller=zero_states(B, c.hidden_size, c.layers), training=training,
                             rng=rng, record=record, **self._memory_start(P, B))
        for t in range(S):
            active = t >= S - lengths
            x = ops.embedding(P["src_emb"], aligned[:, t])
            _, _, state = self._step(x, state, "encoding", None if active.all() else active)
        return dataclasses.replace(state, encoded=True)

    def _decode_step(self, state, prev):
        P = state.params
        x = ops.embedding(P["tgt_emb"], prev)
        h, reads, state = self._step(x, state, "decoding")
        logits = self._output(ops.concat([h] + reads), P, state)
        return logits, state


MODEL_CLASSES = {
    "baseline": BaselineModel,
    "ntm-attention": NTMAttentionModel,
    "mad": MADModel,
    "pure-mann": PureMANNModel,
}


def build_model(config: ModelConfig, seed: int = 0, params: Optional[dict] = None) -> Model:
    return MODEL_CLASSES[config.architecture](config, params=params, seed=seed)
