"""Lorenz-96 features as the dimension grows: only |V_G| depends on d."""

from compfun.features import extract_features
from compfun.ode import make_lorenz96


def main():
    print("d,r_max,Lambda,L_max,n_general")
    for d in (4, 8, 16, 32, 64):
        r, lam, L, n = extract_features(make_lorenz96(d, 8.0, 1.0, 2)).quadruple()
        print(f"{d},{r:g},{lam:g},{L:.6g},{n}")


if __name__ == "__main__":
    main()
