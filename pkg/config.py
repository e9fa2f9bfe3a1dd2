"""
Numerical defaults and environment loading for orlicz-lab.
"""
import os
from dataclasses import dataclass, field
from dotenv import load_dotenv

load_dotenv()


def _env_int(name: str, default: int) -> int:
    raw = os.getenv(name, "")
    return int(raw) if raw.strip() else default


@dataclass
class Config:
    # ── Randomness ──────────────────────────────────────────────────────────
    seed_override: int | None = field(
        default_factory=lambda: int(os.environ["ORLICZ_LAB_SEED"]) if os.getenv("ORLICZ_LAB_SEED") else None
    )
    block_rows: int = 1024          # rows per seeded sampling block

    # ── Orlicz estimation ───────────────────────────────────────────────────
    bootstrap_resamples: int = 200
    bisection_rtol: float = 1e-6
    psi_restarts: int = 4           # sphere optimizer starts for psi_diameter
    psi_iterations: int = 50
    psi_sample_size: int = 100_000  # draws per sample in psi_diameter
    psi_screen_rows: int = 4096     # rows used to score the sphere net

    # ── Chaining ────────────────────────────────────────────────────────────
    grid_scales: int = 14           # epsilon grid: diam, diam/2, ..., diam/2**14
    grid_ratio: float = 0.5

    # ── Empirical suprema ───────────────────────────────────────────────────
    gradient_restarts: int = 32
    gradient_iterations: int = 500
    polish_starts: int = 4
    net_cap: int = 100_000
    reference_sample: int = 200_000  # Monte Carlo population moments
    tail_enumeration_rows: int = 12
    top_ell_enumeration_rows: int = 20
    enumeration_limit: int = 5_000_000

    # ── Geometry ────────────────────────────────────────────────────────────
    rank_tolerance: float = 1e-10
    section_restarts: int = 64
    section_iterations: int = 400
    vertex_enumeration_limit: int = 20_000
    fine_net_points: int = 100_000
    fixed_point_grid: int = 24

    # ── Harness ─────────────────────────────────────────────────────────────
    threads: int = field(default_factory=lambda: _env_int("ORLICZ_LAB_THREADS", 1))

    # ── Logging ─────────────────────────────────────────────────────────────
    log_file: str = field(default_factory=lambda: os.getenv("LOG_FILE", ""))
    log_level: str = field(default_factory=lambda: os.getenv("LOG_LEVEL", "INFO"))

    def update_from_args(self, threads=None, seed=None):
        if threads is not None:
            self.threads = int(threads)
        if seed is not None:
            self.seed_override = int(seed)


# Singleton
config = Config()
