"""Network control pipeline on the scalar linear-quadratic problem.

Prints the K ~ 1/eps and h ~ eps^2 schedules and the measured error
against the grid oracle for a list of tolerances.
"""

import sys

from compfun.control import Thm8Config, make_lq_problem, thm8_pipeline


def main(eps_list=(0.2, 0.1, 0.05)):
    prob = make_lq_problem()
    print("eps,K,K*eps,h,h/eps^2,e1_target,e1,measured_error,3eps,neurons")
    for eps in eps_list:
        _, r = thm8_pipeline(prob, eps, Thm8Config())
        print(
            f"{eps},{r['K']},{r['K_raw'] * eps:.4f},{r['h']:.3e},{r['h'] / eps**2:.4f},"
            f"{r['e1_target']:.2e},{r['e1']:.2e},{r['measured_error']:.4f},{3 * eps},{r['neuron_count']}"
        )


if __name__ == "__main__":
    main(tuple(float(a) for a in sys.argv[1:]) or (0.2, 0.1, 0.05))
