"""False alarms and detections across reliability indices on the damage sequence."""
import argparse

from shmnovelty.engine import EngineConfig, GroundTruth, run
from shmnovelty.features import window_array
from shmnovelty.gan import GanTrainConfig
from shmnovelty.synthetic import damage_sequence_spec, generate_synthetic


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--betas", type=float, nargs="+", default=[1.0, 2.0, 3.0])
    ap.add_argument("--vl", type=int, default=10)
    ap.add_argument("--mode", choices=["static", "dynamic"], default="dynamic")
    ap.add_argument("--epochs", type=int, default=2000)
    args = ap.parse_args()

    stream, bounds = generate_synthetic(damage_sequence_spec())
    windows = window_array(stream, 256)
    gan = GanTrainConfig(epochs=args.epochs, generator_hidden=(128, 256), discriminator_hidden=(128, 64))
    print(f"{'beta':>5} {'iters':>6} {'false':>6} {'ratio %':>8}  outcomes")
    for beta in args.betas:
        report = run(windows, EngineConfig(v_l=args.vl, beta=beta, mode=args.mode, gan=gan), GroundTruth(bounds))
        outcomes = " ".join(f"{k}:{v['outcome']}" + (f"+{v['delay']}" if v["delay"] else "")
                            for k, v in sorted(report.outcomes.items()))
        print(f"{beta:5.2f} {report.n_iterations:6d} {report.false_alarms:6d} "
              f"{100 * report.false_alarm_ratio:8.3f}  {outcomes}")


if __name__ == "__main__":
    main()
