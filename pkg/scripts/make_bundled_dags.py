"""Regenerate the DAG files shipped in ``src/compfun/data``."""

from pathlib import Path

from compfun.fileio import save_dag
from compfun.ode import make_lorenz96
from compfun.systems import make_power_system

DATA = Path(__file__).resolve().parents[1] / "src" / "compfun" / "data"


def main():
    DATA.mkdir(parents=True, exist_ok=True)
    print(save_dag(make_lorenz96(4, 8.0, 1.0), DATA / "lorenz96_d4.json"))
    print(save_dag(make_power_system(), DATA / "power_system.json"))


if __name__ == "__main__":
    main()
