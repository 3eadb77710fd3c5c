"""Synthetic sparse-recovery experiments and the benchmark grid runner.

A synthetic problem starts from a nonnegative sparse signal matrix (one
source per column), mixes it with uniform random factor matrices into a
Kruskal tensor, and optionally adds rectified Gaussian noise scaled to a
target signal-to-noise ratio.  The grid runner decomposes one such tensor
for every (method, beta, repeat) cell and scores the recovered signal-mode
factor against the ground truth.
"""

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources

import multiprocessing

import numpy as np

from .metrics import count_nonzero_components, psnr, sparsity_level
from .solvers import METHODS, SolverConfig, decompose
from .tensor import DenseTensor, FactorSet, kruskal_to_dense

BUNDLED_SIGNAL_ASSET = "sparse_signals_1000x10.dnt"

PRESETS = ("paper-3rd", "paper-4th", "scaled-4th", "demo")

RAW_CSV_HEADER = (
    "method,beta,repeat,seed,objective,rel_err,seconds,iters,"
    "sparsity,components,psnr_db"
)
AGGREGATE_CSV_HEADER = (
    "method,beta,objective,rel_err,seconds,iters,sparsity,components,psnr_db"
)


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for one synthetic tensor.

    ``signal_matrix`` is the (samples, sources) ground truth for mode 0;
    ``mixing_extents`` gives the row counts of the uniformly drawn factors
    for the remaining modes; ``snr_db`` of ``None`` means noiseless.
    """

    signal_matrix: np.ndarray = field(repr=False)
    mixing_extents: tuple
    snr_db: float = None

    def __post_init__(self):
        m = np.asarray(self.signal_matrix, dtype=np.float64)
        if m.ndim != 2 or m.size == 0:
            raise ValueError("signal_matrix must be a non-empty matrix")
        if not np.isfinite(m).all() or m.min() < 0:
            raise ValueError("signal_matrix must be finite and nonnegative")
        extents = tuple(int(e) for e in self.mixing_extents)
        if not extents or any(e < 1 for e in extents):
            raise ValueError("mixing_extents must be positive")
        if self.snr_db is not None and not np.isfinite(self.snr_db):
            object.__setattr__(self, "snr_db", None)
        object.__setattr__(self, "signal_matrix", m)
        object.__setattr__(self, "mixing_extents", extents)

    @property
    def shape(self):
        return (self.signal_matrix.shape[0],) + self.mixing_extents

    @property
    def sources(self):
        return self.signal_matrix.shape[1]


def sparse_signal_matrix(length, channels, rng, zero_fraction=(0.72, 0.88)):
    """Draw sparse nonnegative piecewise signals, one channel per column.

    Each channel picks a zero fraction inside ``zero_fraction``, splits the
    remaining budget into a few non-overlapping segments, and fills every
    segment with a strictly positive block, ramp, half-sine bump, or uniform
    burst.  The realized zero fraction equals the drawn one up to rounding.
    """
    length = int(length)
    channels = int(channels)
    if length < 20 or channels < 1:
        raise ValueError("need length >= 20 and channels >= 1")
    out = np.zeros((length, channels))
    for c in range(channels):
        active = int(round(length * (1.0 - rng.uniform(*zero_fraction))))
        active = max(active, 4)
        segments = int(rng.integers(3, 9))
        widths = _split_budget(active, segments, rng)
        occupied = np.zeros(length, dtype=bool)
        for width in widths:
            start = _free_slot(occupied, width, rng)
            if start is None:
                continue
            stop = start + width
            occupied[start:stop] = True
            amp = rng.uniform(0.5, 1.5)
            kind = int(rng.integers(0, 4))
            if kind == 0:
                seg = np.full(width, amp)
            elif kind == 1:
                seg = np.linspace(amp / width, amp, width)
            elif kind == 2:
                seg = amp * np.sin(np.linspace(0.0, np.pi, width + 2)[1:-1])
            else:
                seg = rng.uniform(0.2 * amp, amp, size=width)
            out[start:stop, c] = seg
    return out


def _split_budget(total, parts, rng):
    parts = min(parts, total // 2)
    parts = max(parts, 1)
    cuts = np.sort(rng.choice(np.arange(1, total), size=parts - 1, replace=False)) \
        if parts > 1 else np.array([], dtype=int)
    widths = np.diff(np.concatenate(([0], cuts, [total])))
    return [max(int(w), 2) for w in widths]


def _free_slot(occupied, width, rng):
    length = occupied.size
    if width > length:
        return None
    for _ in range(200):
        start = int(rng.integers(0, length - width + 1))
        if not occupied[start:start + width].any():
            return start
    # dense channel: fall back to scanning for the first free run
    run = 0
    for i in range(length):
        run = run + 1 if not occupied[i] else 0
        if run == width:
            return i - width + 1
    return None


def bundled_sparse_signals():
    """The checked-in 1000 x 10 sparse signal matrix used by the presets."""
    from .io import read_matrix

    ref = resources.files("sparsecp").joinpath("assets", BUNDLED_SIGNAL_ASSET)
    with resources.as_file(ref) as path:
        return read_matrix(path)


def add_nonnegative_gaussian_noise(t, snr_db, rng):
    """Add ``max(0, normal)`` noise scaled to an exact signal-to-noise ratio.

    The scale is chosen so ``10 * log10(||t||_F**2 / ||noise||_F**2)`` equals
    ``snr_db`` for the realized draw.
    """
    if not isinstance(t, DenseTensor):
        t = DenseTensor(np.asarray(t))
    raw = np.maximum(rng.standard_normal(t.shape), 0.0)
    signal_norm = math.sqrt(t.norm_squared())
    raw_norm = float(np.linalg.norm(raw.ravel()))
    if signal_norm <= 0.0:
        raise ValueError("cannot set a noise level for a zero tensor")
    if raw_norm <= 0.0:
        raise ValueError("degenerate noise draw")
    scale = signal_norm / (10.0 ** (snr_db / 20.0) * raw_norm)
    return DenseTensor(t.data + scale * raw)


def generate_synthetic(spec, rng):
    """Materialize a :class:`SyntheticSpec` into (tensor, ground-truth factors).

    ``rng`` is a seed or Generator; mixing factors are drawn uniform on
    [0, 1) in mode order, then the noise draw follows, so a fixed seed fixes
    every byte of the output.
    """
    rng = np.random.default_rng(rng)
    sources = spec.sources
    factors = [spec.signal_matrix]
    factors.extend(rng.random((extent, sources)) for extent in spec.mixing_extents)
    truth = FactorSet(factors)
    clean = kruskal_to_dense(truth)
    if spec.snr_db is None:
        return clean, truth
    return add_nonnegative_gaussian_noise(clean, spec.snr_db, rng), truth


def make_preset(name, rng=None):
    """Build the named benchmark :class:`SyntheticSpec`.

    ``paper-3rd`` and ``paper-4th`` are the published benchmark layouts
    (bundled 1000 x 10 signals mixed into 1000x100x100 and 1000x100x100x5).
    ``scaled-4th`` is the reduced fourth-order layout (200 x 10 signals into
    200x50x50x5) and ``demo`` a small smoke-test layout; both draw their
    signals from ``rng``.
    """
    if name == "paper-3rd":
        return SyntheticSpec(bundled_sparse_signals(), (100, 100), 40.0)
    if name == "paper-4th":
        return SyntheticSpec(bundled_sparse_signals(), (100, 100, 5), 40.0)
    if name == "scaled-4th":
        rng = np.random.default_rng(rng)
        return SyntheticSpec(sparse_signal_matrix(200, 10, rng), (50, 50, 5), 40.0)
    if name == "demo":
        rng = np.random.default_rng(rng)
        return SyntheticSpec(sparse_signal_matrix(80, 4, rng), (15, 15), 30.0)
    raise ValueError(f"unknown preset {name!r}, expected one of {PRESETS}")


def default_limits(order):
    """(stop_epsilon, max_seconds) used for benchmark tensors of this order."""
    if order <= 3:
        return 1e-8, 180.0
    return 1e-7, 1800.0


@dataclass
class ExperimentGrid:
    """The (method, beta, repeat) grid evaluated on one fixed tensor.

    Noise is part of the tensor and therefore shared by every cell; repeats
    differ only in the initialization seed, which is derived from
    ``base_seed`` and the cell's position.
    """

    methods: tuple
    betas: tuple
    repeats: int
    rank: int
    alpha: float = 1e-6
    stop_rule: str = "relerr_change"
    stop_epsilon: float = 1e-8
    max_iters: int = 10000
    max_seconds: float = 180.0
    base_seed: int = 0
    signal_mode: int = 0
    threshold: float = 1e-3

    def __post_init__(self):
        self.methods = tuple(str(m).lower() for m in self.methods)
        self.betas = tuple(float(b) for b in self.betas)
        self.repeats = int(self.repeats)

    def validate(self):
        for m in self.methods:
            if m not in METHODS:
                raise ValueError(f"unknown method {m!r}")
        if not self.methods or not self.betas:
            raise ValueError("grid needs at least one method and one beta")
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")
        if any(b < 0 for b in self.betas):
            raise ValueError("beta values must be >= 0")

    def cells(self):
        """(index, method, beta, repeat) in the fixed evaluation order."""
        out = []
        index = 0
        for method in self.methods:
            for beta in self.betas:
                for repeat in range(self.repeats):
                    out.append((index, method, beta, repeat))
                    index += 1
        return out


@dataclass(frozen=True)
class RunRecord:
    method: str
    beta: float
    repeat: int
    seed: int
    objective: float
    rel_err: float
    seconds: float
    iters: int
    sparsity: float
    components: int
    psnr_db: float


@dataclass(frozen=True)
class AggregateRow:
    """Arithmetic means over one (method, beta) cell's repeats."""

    method: str
    beta: float
    objective: float
    rel_err: float
    seconds: float
    iters: float
    sparsity: float
    components: float
    psnr_db: float
    psnr_samples: tuple


@dataclass(frozen=True)
class GridResult:
    records: tuple
    aggregates: tuple
    failures: tuple = ()


def run_seed(base_seed, index):
    """Deterministic per-run seed: counter-based split of ``base_seed``."""
    seq = np.random.SeedSequence(int(base_seed), spawn_key=(int(index),))
    return int(seq.generate_state(1, np.uint64)[0])


_SHARED = {}


def _set_shared(tensor, reference, grid):
    _SHARED["tensor"] = tensor
    _SHARED["reference"] = reference
    _SHARED["grid"] = grid


def _run_cell(payload):
    index, method, beta, repeat, seed, budget = payload
    tensor = _SHARED["tensor"]
    reference = _SHARED["reference"]
    grid = _SHARED["grid"]
    cfg = SolverConfig(
        rank=grid.rank,
        method=method,
        alpha=grid.alpha,
        beta=beta,
        stop_rule=grid.stop_rule,
        stop_epsilon=grid.stop_epsilon,
        max_iters=grid.max_iters if budget is None else budget,
        max_seconds=grid.max_seconds if budget is None else None,
        rng_seed=seed,
    )
    try:
        result = decompose(tensor, cfg)
        record = _score_run(result, reference, grid, method, beta, repeat, seed)
        return index, record, None
    except Exception as exc:  # a failed cell must not sink the grid
        return index, None, f"{method} beta={beta} repeat={repeat}: {exc}"


def _score_run(result, reference, grid, method, beta, repeat, seed):
    a = np.asarray(result.factors[grid.signal_mode])
    sparsity = sparsity_level(a, grid.threshold)
    components = count_nonzero_components(a, grid.threshold)
    alive = np.flatnonzero((np.abs(a) >= grid.threshold).any(axis=0))
    if alive.size and reference is not None:
        psnr_db = psnr(a[:, alive], reference).psnr_db
    else:
        psnr_db = float("nan")
    last = result.trace[-1]
    return RunRecord(
        method=method,
        beta=beta,
        repeat=repeat,
        seed=seed,
        objective=last.objective,
        rel_err=last.rel_err,
        seconds=result.wall_seconds,
        iters=result.iterations,
        sparsity=sparsity,
        components=components,
        psnr_db=psnr_db,
    )


def run_grid(tensor, reference, grid, workers=1, budgets=None):
    """Evaluate every grid cell on ``tensor`` and aggregate per (method, beta).

    ``reference`` is the ground-truth signal matrix for PSNR scoring (may be
    None).  ``budgets`` optionally pins each cell's iteration count by index,
    which disables the wall-clock limit for that cell; the replay path uses
    this.  Individual cell failures are collected, not raised.
    """
    grid.validate()
    if not isinstance(tensor, DenseTensor):
        tensor = DenseTensor(np.asarray(tensor))
    payloads = []
    for index, method, beta, repeat in grid.cells():
        budget = None if budgets is None else budgets.get(index)
        payloads.append((index, method, beta, repeat,
                         run_seed(grid.base_seed, index), budget))

    outcomes = {}
    if workers <= 1:
        _set_shared(tensor, reference, grid)
        for payload in payloads:
            index, record, failure = _run_cell(payload)
            outcomes[index] = (record, failure)
    else:
        ctx = multiprocessing.get_context("fork")
        with ProcessPoolExecutor(max_workers=workers, mp_context=ctx,
                                 initializer=_set_shared,
                                 initargs=(tensor, reference, grid)) as pool:
            for index, record, failure in pool.map(_run_cell, payloads):
                outcomes[index] = (record, failure)

    records = []
    failures = []
    for index in sorted(outcomes):
        record, failure = outcomes[index]
        if record is not None:
            records.append(record)
        else:
            failures.append(failure)
    return GridResult(tuple(records), _aggregate(records, grid), tuple(failures))


def _aggregate(records, grid):
    rows = []
    for method in grid.methods:
        for beta in grid.betas:
            cell = [r for r in records if r.method == method and r.beta == beta]
            if not cell:
                continue
            samples = tuple(r.psnr_db for r in cell)
            finite = [s for s in samples if not math.isnan(s)]
            rows.append(AggregateRow(
                method=method,
                beta=beta,
                objective=float(np.mean([r.objective for r in cell])),
                rel_err=float(np.mean([r.rel_err for r in cell])),
                seconds=float(np.mean([r.seconds for r in cell])),
                iters=float(np.mean([r.iters for r in cell])),
                sparsity=float(np.mean([r.sparsity for r in cell])),
                components=float(np.mean([r.components for r in cell])),
                psnr_db=float(np.mean(finite)) if finite else float("nan"),
                psnr_samples=samples,
            ))
    return tuple(rows)


def _fmt(value):
    return f"{value:.17g}"


def records_to_csv(records):
    lines = [RAW_CSV_HEADER]
    for r in records:
        lines.append(",".join([
            r.method, _fmt(r.beta), str(r.repeat), str(r.seed),
            _fmt(r.objective), _fmt(r.rel_err), _fmt(r.seconds), str(r.iters),
            _fmt(r.sparsity), str(r.components), _fmt(r.psnr_db),
        ]))
    return "\n".join(lines) + "\n"


def aggregates_to_csv(rows):
    lines = [AGGREGATE_CSV_HEADER]
    for r in rows:
        lines.append(",".join([
            r.method, _fmt(r.beta), _fmt(r.objective), _fmt(r.rel_err),
            _fmt(r.seconds), _fmt(r.iters), _fmt(r.sparsity),
            _fmt(r.components), _fmt(r.psnr_db),
        ]))
    return "\n".join(lines) + "\n"


def aggregates_to_json(rows):
    def clean(x):
        return None if math.isnan(x) else x

    return [
        {
            "method": r.method,
            "beta": r.beta,
            "objective": r.objective,
            "rel_err": r.rel_err,
            "seconds": r.seconds,
            "iters": r.iters,
            "sparsity": r.sparsity,
            "components": r.components,
            "psnr_db": clean(r.psnr_db),
            "psnr_samples": [clean(s) for s in r.psnr_samples],
        }
        for r in rows
    ]
