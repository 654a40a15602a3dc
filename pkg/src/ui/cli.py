"""
Command-line interface for the NTN traffic forecasting toolkit

Exit status: 0 on success, 1 on invalid input or configuration, 2 on any
other failure. Outputs are written atomically, so a failing command leaves
no partial files behind.
"""
import argparse
import logging
import sys

import numpy as np
import pandas as pd

from src.core.artifact_writer import write_csv, write_json
from src.core.config import CONFIG_HELP, RunConfig, TrainConfig, read_config
from src.core.decision_engine import AllocationPolicy, account_provisioning, decide_allocation
from src.core.errors import ConfigError, InsufficientHistory, ValidationError
from src.core.logger import setup_logging
from src.core.metrics import EvaluationRecord, summarize
from src.core.rapp_sim import run_simulation
from src.core.timeseries import SyntheticSpec, generate_synthetic, load_csv, make_windows, save_csv
from src.models.lstm_forecaster import (
    LSTMModel, mse_loss_and_grad, point_forecast_table, point_forecasts_from_table,
    predict_lstm_batch, train_lstm,
)
from src.models.nn_core import LSTMConfig, MLPConfig, grad_check, init_params
from src.models.sff_forecaster import (
    SFFModel, forecast_table, forecasts_from_table, nll_loss_and_grad, predict_sff_batch,
    train_sff,
)

logger = logging.getLogger('ntn_forecast.cli')

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_FAILURE = 2
GRADCHECK_TOLERANCE = 1e-4
MODEL_CLASSES = {'sff': SFFModel, 'lstm': LSTMModel}


def cmd_gen_data(args) -> int:
    spec = SyntheticSpec() if args.spec is None else SyntheticSpec.from_dict(read_config(args.spec))
    dataset = generate_synthetic(spec, args.seed)
    save_csv(dataset, args.out)
    print(f"Wrote {len(dataset)} beams x {dataset.length} hours to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = TrainConfig.from_file(args.config, seed=args.seed)
    dataset = load_csv(args.data)
    windows = make_windows(dataset, cfg.context_len, cfg.horizon, cfg.train_stride)
    if args.model == 'sff':
        model = train_sff(windows, cfg.sff, cfg.horizon)
    else:
        model = train_lstm(windows, cfg.lstm, cfg.horizon)
    model.save(args.out)
    print(f"Trained {args.model} on {len(windows)} windows; "
          f"final loss {model.training_log[-1] if model.training_log else float('nan'):.5f}")
    return EXIT_OK


def load_model(path):
    """Load an SFF or LSTM checkpoint, whichever the file holds"""
    kind = read_config(path).get('model')
    if kind not in MODEL_CLASSES:
        raise ConfigError(f"{path}: not a model checkpoint (model={kind!r})")
    return kind, MODEL_CLASSES[kind].load(path)


def cmd_forecast(args) -> int:
    kind, model = load_model(args.model)
    dataset = load_csv(args.data)
    origin = dataset.end_time if args.origin is None else args.origin
    if origin - dataset.start_time < model.context_len or origin > dataset.end_time:
        raise InsufficientHistory(
            f"Origin {origin} needs {model.context_len} h of data before it within "
            f"[{dataset.start_time}, {dataset.end_time}]"
        )
    telemetry = dataset.slice_until(origin)
    contexts = np.stack([s.values[-model.context_len:] for s in telemetry])
    origins = [origin] * len(telemetry)
    if kind == 'sff':
        forecasts = predict_sff_batch(model, contexts, telemetry.beam_ids, origins)
        percentiles = range(1, 100) if args.all_percentiles else None
        frame = forecast_table(forecasts, percentiles)
    else:
        forecasts = predict_lstm_batch(model, contexts, telemetry.beam_ids, origins)
        frame = point_forecast_table(forecasts)
    write_csv(frame, args.out)
    print(f"Wrote {kind} forecasts for {len(forecasts)} beams at origin {origin} to {args.out}")
    return EXIT_OK


def read_forecasts(path):
    """Gaussian or point forecasts from a forecast CSV, by its columns"""
    frame = pd.read_csv(path, dtype={'beam_id': str})
    if {'mu', 'sigma'} <= set(frame.columns):
        return 'sff', forecasts_from_table(frame)
    if 'value' in frame.columns:
        return 'lstm', point_forecasts_from_table(frame)
    raise ValidationError(f"{path}: neither a Gaussian nor a point forecast table")


def cmd_evaluate(args) -> int:
    kind, forecasts = read_forecasts(args.forecast)
    dataset = load_csv(args.data)
    policy = AllocationPolicy.parse(args.policy)

    entries = []
    for f in forecasts:
        try:
            series = dataset.get(f.beam_id)
        except KeyError:
            raise ValidationError(f"Beam {f.beam_id!r} is not in {args.data}") from None
        actual = series.between(f.origin_time, f.origin_time + f.horizon)
        plan = decide_allocation(f, policy)
        entries.append(EvaluationRecord(kind, f.beam_id, f.origin_time, f, plan,
                                        account_provisioning(plan, actual), actual))

    report = summarize(entries)
    data = report.to_dict()
    data['policy'] = str(policy)
    write_json(data, args.out)
    outcome = report.provisioning[kind]
    print(f"{kind}: MAE {report.record(kind).mae:.3f}, over {outcome.over_rate:.2%}, "
          f"under {outcome.under_rate:.2%}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    run_cfg = RunConfig.from_file(args.config)
    out = args.out or run_cfg.output_dir
    if not out:
        raise ConfigError("No output directory: pass --out or set output_dir in the config")
    log = run_simulation(run_cfg.sim)
    log.save(out)
    report = log.summary()
    for record in report.records:
        outcome = report.provisioning[record.model]
        print(f"{record.model}: MAE {record.mae:.3f}, RMSE {record.rmse:.3f}, "
              f"over {outcome.over_rate:.2%}, under {outcome.under_rate:.2%}")
    return EXIT_OK


def gradcheck_errors(seed: int = 0) -> dict:
    """Max relative gradient errors of the SFF (MLP + NLL) and LSTM (MSE) losses"""
    rng = np.random.default_rng(seed)

    mlp = init_params(MLPConfig(6, (8, 8), 2 * 3), seed)
    contexts, targets = rng.normal(size=(4, 6)), rng.normal(size=(4, 3))
    sff_error = grad_check(lambda p: nll_loss_and_grad(p, contexts, targets), mlp, seed=seed)

    lstm = init_params(LSTMConfig(1, 4, 2), seed)
    sequences, truths = rng.normal(size=(3, 3)), rng.normal(size=(3, 2))
    lstm_error = grad_check(lambda p: mse_loss_and_grad(p, sequences, truths), lstm, seed=seed)

    return {'sff': sff_error, 'lstm': lstm_error}


def cmd_gradcheck(args) -> int:
    errors = gradcheck_errors(args.seed)
    for name, error in errors.items():
        print(f"{name}: max relative error {error:.3e}")
    if max(errors.values()) > GRADCHECK_TOLERANCE:
        logger.error(f"Gradient check failed (tolerance {GRADCHECK_TOLERANCE:g})")
        return EXIT_FAILURE
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='ntn-forecast',
        description="Probabilistic satellite traffic forecasting and provisioning",
    )
    parser.add_argument('--log-level', default='INFO',
                        choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'])
    parser.add_argument('--log-dir', default='logs',
                        help="Directory for log files; '' logs to the console only")
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('gen-data', help="Generate a synthetic multi-beam dataset")
    p.add_argument('--spec', help="SyntheticSpec JSON (defaults when omitted)")
    p.add_argument('--seed', type=int, required=True)
    p.add_argument('--out', required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser('train', help="Train an SFF or LSTM model")
    p.add_argument('--model', choices=sorted(MODEL_CLASSES), required=True)
    p.add_argument('--data', required=True)
    p.add_argument('--config', help="Train config JSON: seed, context_len, horizon, "
                                    "train_stride, sff, lstm")
    p.add_argument('--seed', type=int, help="Overrides the config seed")
    p.add_argument('--out', required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser('forecast', help="Forecast every beam from a trained model")
    p.add_argument('--model', required=True, help="Model checkpoint JSON")
    p.add_argument('--data', required=True)
    p.add_argument('--origin', type=int,
                   help="Epoch hour of the first forecast step (default: end of data)")
    p.add_argument('--all-percentiles', action='store_true',
                   help="Write p01..p99 instead of the standard percentile columns")
    p.add_argument('--out', required=True)
    p.set_defaults(func=cmd_forecast)

    p = sub.add_parser('evaluate', help="Score forecasts and audit an allocation policy")
    p.add_argument('--forecast', required=True)
    p.add_argument('--data', required=True)
    p.add_argument('--policy', default='point',
                   help="point, quantile:P or headroom:F")
    p.add_argument('--out', required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser('simulate', help="Run the closed-loop rApp simulation",
                       epilog=CONFIG_HELP, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument('--config', required=True)
    p.add_argument('--out', help="Output directory (overrides output_dir)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser('gradcheck', help="Verify analytic gradients by finite differences")
    p.add_argument('--seed', type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def run(argv=None) -> int:
    """Parse arguments, run one command and return its exit status"""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        if e.code in (0, None):
            return EXIT_OK
        print(f"Run '{parser.prog} <command> --help' for options; "
              f"'{parser.prog} simulate --help' lists the config schema", file=sys.stderr)
        return EXIT_INVALID
    setup_logging(getattr(logging, args.log_level), args.log_dir or None)

    try:
        return args.func(args)
    except ValidationError as e:
        logger.error(f"{args.command}: {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as e:
        logger.error(f"{args.command} failed: {e}", exc_info=True)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAILURE


def main():
    sys.exit(run())
