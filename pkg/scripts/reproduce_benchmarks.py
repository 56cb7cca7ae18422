"""Run the bundled benchmark configs and print a one-line summary each.

The four configs pair each benchmark with its reduced-variable algorithm
and with the unreduced output-data variant on the same window, where the
rank condition is expected to fail. Artifacts land under --output-root.
"""

import argparse
import sys

from oflqr import cli

ORDER = (
    "example1_improved_pi",
    "example1_original_pi_fails",
    "example2_improved_vi",
    "example2_original_vi_fails",
)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--output-root", default="runs", help="artifact directory root")
    args = parser.parse_args(argv)

    configs = cli.bundled_configs()
    rows = []
    all_ok = True
    for name in ORDER:
        cfg = cli.load_config(configs[name])
        report = cli.run_config(cfg, output_root=args.output_root, name=name)
        all_ok = all_ok and report.ok
        data = report.data
        rank_key = cli._DATA_ALGORITHMS[cfg["algorithm"]["name"]][1]
        cond = (data["rank"] or {}).get(rank_key, {})
        rows.append((
            name,
            report.status,
            data["iterations"],
            data["normalized_value_error"],
            data["normalized_gain_error"],
            f"{cond.get('achieved')}/{cond.get('required')}",
        ))

    head = f"{'config':34} {'status':22} {'iters':>6} {'value err':>10} {'gain err':>10} {'rank':>7}"
    print(head)
    print("-" * len(head))
    for name, status, iters, err_p, err_k, rank in rows:
        fmt = lambda v: "-" if v is None else f"{v:.2e}"
        print(f"{name:34} {status:22} {str(iters or '-'):>6} {fmt(err_p):>10} {fmt(err_k):>10} {rank:>7}")
    return 0 if all_ok else 1


if __name__ == "__main__":
    sys.exit(main())
