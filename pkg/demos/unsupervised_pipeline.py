"""Two-stage autoencoder anomaly detection without labels.

Trains an autoencoder on 1-s windows, drops the worst-reconstructed fifth of
the training windows, retrains, then clusters the (rmse, Mahalanobis) errors
of each 5-s slice. Labels are only used for the final metrics.
"""
import argparse
import logging

from tsdigraph.data import RunConfig, synth_ecg
from tsdigraph.experiments import unsupervised_experiment


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--recordings", type=int, default=20)
    p.add_argument("--seconds", type=int, default=250)
    p.add_argument("--model", default="TCNAE1")
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--retrain-epochs", type=int, default=40)
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    records = synth_ecg(args.recordings, args.seconds, seed=0)
    cfg = RunConfig(model=args.model, epochs=args.epochs, retrain_epochs=args.retrain_epochs,
                    dtype="float32")
    combos = [("A", "kmeans"), ("A", "dbscan"), ("B", "kmeans"), ("B", "dbscan")]
    res = unsupervised_experiment(records, cfg, combos)
    print(f"anomalous training windows: {res.anomaly_rate_before:.3f} before refinement, "
          f"{res.anomaly_rate_after:.3f} after")
    for (approach, clusterer), r in res.results.items():
        m = r.metrics
        print(f"{clusterer:>6}-{approach}: accuracy {m.accuracy:.3f}  "
              f"precision(0) {m.precision_0:.3f}  recall(0) {m.recall_0:.3f}")


if __name__ == "__main__":
    main()
