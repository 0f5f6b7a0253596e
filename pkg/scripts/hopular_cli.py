"""
Module hopular_cli.py
Giao diện dòng lệnh: huấn luyện, đánh giá, kiểm tra cận dung lượng, truy hồi Hopfield,
kiểm tra gradient, các phép kiểm chứng tương đương, sinh dữ liệu tổng hợp và tìm kiếm lưới.
Mỗi lần chạy ghi một manifest (cấu hình, seed, phiên bản mã, dấu vân tay dữ liệu).
"""

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import replace

import numpy as np
import pandas as pd

from . import __version__
from .checkpoint import load_checkpoint, save_checkpoint
from .config import get_output_dir, load_run_config
from .data_collect import GENERATORS, make_toy_table, run_task
from .data_loader import encode_rows, fit_normalization, load, split, write_split_file
from .errors import ConfigurationError, HopularError
from .evaluation import (evaluate_model, grid_search, knn_baseline, majority_baseline, run_replicates,
                         summary_table, target_metric, write_metrics)
from .hopfield import (CapacityParams, PatternMemory, ball_points, retrieve, storage_capacity_bound,
                       sphere_patterns)
from .hopular_model import HopularModel
from .oracles import adaboost_suite, nw_equivalence_suite
from .training import fit, model_gradcheck
from .visualization import plot_capacity_curve, plot_energy_trajectory, plot_training_history, save_figure

logger = logging.getLogger(__name__)

NW_TOLERANCE = 1e-10
ADABOOST_TOLERANCE = 1e-6
GRADCHECK_TOLERANCE = 1e-4
LOG_LEVELS = ['DEBUG', 'INFO', 'WARNING', 'ERROR']


def file_sha256(path):
    digest = hashlib.sha256()
    with open(path, 'rb') as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b''):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(out_dir, args, config=None, data_files=()):
    """Ghi manifest.json đủ để chạy lại: lệnh, tham số, seed, phiên bản mã, cấu hình, sha256 dữ liệu."""
    os.makedirs(out_dir, exist_ok=True)
    manifest = {
        'command': args.command,
        'arguments': {k: v for k, v in vars(args).items() if k != 'handler'},
        'seed': config.seed if config is not None else _seed(args),
        'version': __version__,
        'config': config.to_dict() if config is not None else None,
        'data': {path: file_sha256(path) for path in data_files if path},
    }
    path = os.path.join(out_dir, 'manifest.json')
    with open(path, 'w', encoding='utf-8') as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=str)
    logger.info(f"Da ghi manifest vao {path}")
    return path


def parse_split_spec(value):
    """'0.8,0.1,0.1' → bộ ba tỉ lệ; giá trị khác được coi là đường dẫn file chỉ số."""
    if os.path.exists(value):
        return value
    try:
        fractions = tuple(float(x) for x in value.split(','))
    except ValueError as e:
        raise ConfigurationError(f"--split phai la 3 ti le hoac file chi so ton tai: {value!r}") from e
    return fractions


def _seed(args):
    """Seed của lệnh; mặc định 0 khi không truyền --seed."""
    return 0 if args.seed is None else args.seed


def _load_views(args, seed):
    dataset = load(args.data, args.schema)
    return split(dataset, parse_split_spec(args.split), seed=seed)


def _run_config(args):
    config = load_run_config(args.config)
    # --seed chỉ ghi đè [run] seed khi được truyền
    overrides = {key: getattr(args, key) for key in ('seed', 'epochs', 'patience', 'replicates')
                 if getattr(args, key, None) is not None}
    return config.with_overrides(**overrides) if overrides else config


# ================= các lệnh con =================

def cmd_train(args):
    config = _run_config(args)
    out_dir = args.out_dir or get_output_dir()
    os.makedirs(out_dir, exist_ok=True)
    views = _load_views(args, config.seed)
    write_split_file(os.path.join(out_dir, 'split.txt'), views)
    model = HopularModel(views.dataset.schema, config.model)

    if config.replicates > 1:
        report, fitted = run_replicates(views, config, jobs=args.jobs, history_dir=out_dir)
        params = fitted[0][1]
    else:
        history_file = os.path.join(out_dir, 'history.jsonl')
        result = fit(model, views, config.training, seed=config.seed, history_file=history_file,
                     metric_fn=target_metric)
        params = result.params
        report = evaluate_model(model, params, views, 'test')
        if args.plot:
            save_figure(plot_training_history(result.history), os.path.join(out_dir, 'history.html'))

    save_checkpoint(os.path.join(out_dir, 'model.npz'), model, params, views, config.training,
                    extra={'seed': config.seed, 'version': __version__,
                           'data_file': os.path.abspath(args.data), 'schema_file': os.path.abspath(args.schema)})
    reports = [report, knn_baseline(views, k=1), majority_baseline(views)]
    write_metrics(reports, os.path.join(out_dir, 'metrics.jsonl'))
    write_manifest(out_dir, args, config, (args.data, args.schema, args.config))
    print(summary_table(reports))
    return 0


def cmd_evaluate(args):
    checkpoint = load_checkpoint(args.checkpoint)
    data_file = args.data or checkpoint.header.get('data_file')
    if not data_file:
        raise ConfigurationError("Can --data: checkpoint khong ghi duong dan du lieu huan luyen")
    dataset = load(data_file, args.schema or checkpoint.model.schema)
    if dataset.schema.fingerprint != checkpoint.model.schema.fingerprint:
        raise ConfigurationError("Schema cua du lieu khong khop checkpoint")
    if checkpoint.header.get('data_fingerprint') not in (None, dataset.fingerprint):
        logger.warning("Dau van tay du lieu khac voi luc huan luyen")
    views = split(dataset, checkpoint.splits)

    reports = [evaluate_model(checkpoint.model, checkpoint.params, views, args.split)]
    if args.baselines:
        reports += [knn_baseline(views, k=args.k, split=args.split), majority_baseline(views, args.split)]
    if args.out_dir:
        write_metrics(reports, os.path.join(args.out_dir, 'metrics.jsonl'))
        write_manifest(args.out_dir, args, data_files=(data_file, args.checkpoint))
    print(summary_table(reports))
    return 0


def cmd_capacity_check(args):
    params = CapacityParams(p=args.p, K=args.K, d=args.d, beta=args.beta)
    rows = [('a', params.a), ('b', params.b), ('a + ln b', params.a + np.log(params.b)),
            ('c', params.c), ('threshold', params.threshold)]
    for name, value in rows:
        print(f"{name:>10s} = {value:.6f}")
    print(f"{'N_min':>10s} = {storage_capacity_bound(params):.6f}")
    if args.plot:
        dims = np.unique(np.geomspace(2, 4 * args.d, 24).astype(int))
        save_figure(plot_capacity_curve(dims, K=args.K, beta=args.beta, p=args.p), args.plot)
    return 0


def _read_patterns(args, rng):
    if args.patterns:
        # mỗi dòng của file là một mẫu
        return pd.read_csv(args.patterns, header=None).to_numpy(dtype=np.float64).T
    if args.random_d and args.random_n:
        return sphere_patterns(rng, args.random_d, args.random_n, args.radius)
    raise ConfigurationError("Can --patterns hoac --random-d va --random-n")


def cmd_retrieve(args):
    rng = np.random.default_rng(_seed(args))
    mem = PatternMemory(_read_patterns(args, rng), args.beta)
    if args.query:
        xi = np.array([float(x) for x in args.query.split(',')])
    else:
        xi = ball_points(rng, mem.pattern(args.query_index), args.noise, 1)[0]
    result = retrieve(mem, xi, tol=args.tol, max_iter=args.max_iter)
    print(f"converged   = {result.converged}")
    print(f"iterations  = {result.iterations}")
    print(f"final_delta = {result.final_delta:.3e}")
    print("xi_star     = " + ', '.join(f"{v:.6f}" for v in result.xi_star))
    if args.plot:
        save_figure(plot_energy_trajectory(result.energies), args.plot)
    return 0


def cmd_gradcheck(args):
    rng = np.random.default_rng(_seed(args))
    if args.data and args.schema:
        dataset = load(args.data, args.schema)
    else:
        dataset = make_toy_table(seed=_seed(args))
    rows = np.arange(dataset.n_rows)
    dataset = replace(dataset, stats=fit_normalization(dataset, rows))
    values, missing = encode_rows(dataset, rows)
    config = load_run_config(args.config).model if args.config else None
    config = config or replace(load_run_config().model, embedding_dim=4, n_blocks=1, n_heads=2, dropout=(0.0, 0.0, 0.0))
    model = HopularModel(dataset.schema, config)
    errors = model_gradcheck(model, model.init_params(rng), values, missing, seed=_seed(args))
    worst = max(errors.values())
    print(pd.Series(errors, name='max_rel_error').to_string(float_format=lambda v: f"{v:.3e}"))
    print(f"max relative error = {worst:.3e}")
    return 0 if worst < args.threshold else 1


def cmd_oracle_nw(args):
    table = nw_equivalence_suite(n_cases=args.cases, seed=_seed(args))
    worst = float(table['deviation'].max())
    print(table.groupby('beta')['deviation'].max().to_string())
    print(f"max deviation = {worst:.3e}")
    return 0 if worst < NW_TOLERANCE else 1


def cmd_oracle_adaboost(args):
    table = adaboost_suite(n_cases=args.cases, seed=_seed(args))
    fd_error, hs_deviation = float(table['fd_error'].max()), float(table['hs_deviation'].max())
    print(f"max finite-difference relative error = {fd_error:.3e}")
    print(f"max H_s deviation                    = {hs_deviation:.3e}")
    return 0 if fd_error < ADABOOST_TOLERANCE and hs_deviation < NW_TOLERANCE else 1


def cmd_make_synthetic(args):
    table_file, schema_file = run_task(args.kind, args.out_dir, args.n_samples, _seed(args))
    print(table_file)
    print(schema_file)
    return 0


def cmd_grid(args):
    config = _run_config(args)
    out_dir = args.out_dir or get_output_dir()
    os.makedirs(out_dir, exist_ok=True)
    views = _load_views(args, config.seed)
    best, table = grid_search(views, config, history_dir=out_dir)
    table.to_json(os.path.join(out_dir, 'grid.jsonl'), orient='records', lines=True, double_precision=15)
    write_manifest(out_dir, args, config, (args.data, args.schema, args.config))
    print(table.to_string(index=False))
    print(f"best = {best}")
    return 0


# ================= parser =================

def _add_data_arguments(parser):
    parser.add_argument('--data', required=True, help='File CSV du lieu')
    parser.add_argument('--schema', required=True, help='File schema')
    parser.add_argument('--config', default=None, help='File cau hinh INI')
    parser.add_argument('--split', default='0.8,0.1,0.1', help='Ti le train,val,test hoac file chi so')
    parser.add_argument('--out-dir', default=None, help='Thu muc ket qua (mac dinh HOPULAR_OUTPUT_DIR)')
    parser.add_argument('--epochs', type=int, default=None)
    parser.add_argument('--patience', type=int, default=None)


def build_parser():
    parser = argparse.ArgumentParser(prog='hopular', description="Hopular: mang Hopfield hien dai cho du lieu bang.")
    parser.add_argument('--seed', type=int, default=None, help='Seed cho moi nguon ngau nhien (mac dinh 0)')
    parser.add_argument('--log-level', default='INFO', choices=LOG_LEVELS)
    # cho phép đặt --seed / --log-level cả sau tên lệnh con; SUPPRESS giữ giá trị đã đọc ở trên
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--seed', type=int, default=argparse.SUPPRESS, help='Seed cho moi nguon ngau nhien')
    common.add_argument('--log-level', default=argparse.SUPPRESS, choices=LOG_LEVELS)
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('train', parents=[common], help='Huan luyen mo hinh')
    _add_data_arguments(p)
    p.add_argument('--replicates', type=int, default=None)
    p.add_argument('--jobs', type=int, default=1, help='So tien trinh cho cac replicate')
    p.add_argument('--plot', action='store_true', help='Ghi bieu do lich su huan luyen (HTML)')
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser('evaluate', parents=[common], help='Danh gia checkpoint tren mot tap')
    p.add_argument('--checkpoint', required=True)
    p.add_argument('--data', default=None, help='Mac dinh lay file du lieu ghi trong checkpoint')
    p.add_argument('--schema', default=None, help='Mac dinh lay schema trong checkpoint')
    p.add_argument('--split', default='test', choices=['train', 'val', 'test'])
    p.add_argument('--baselines', action='store_true', help='Them baseline k-NN va lop da so')
    p.add_argument('--k', type=int, default=1)
    p.add_argument('--out-dir', default=None)
    p.set_defaults(handler=cmd_evaluate)

    p = sub.add_parser('capacity-check', parents=[common], help='Tinh hang so c va N_min cua can dung luong')
    p.add_argument('--beta', type=float, required=True)
    p.add_argument('--K', type=float, required=True)
    p.add_argument('--d', type=int, required=True)
    p.add_argument('--p', type=float, required=True)
    p.add_argument('--plot', default=None, help='File HTML bieu do N_min theo d')
    p.set_defaults(handler=cmd_capacity_check)

    p = sub.add_parser('retrieve', parents=[common], help='Truy hoi tu bo nho Hopfield')
    p.add_argument('--patterns', default=None, help='CSV khong header, moi dong la mot mau')
    p.add_argument('--random-d', type=int, default=None)
    p.add_argument('--random-n', type=int, default=None)
    p.add_argument('--radius', type=float, default=1.0)
    p.add_argument('--beta', type=float, default=1.0)
    p.add_argument('--query', default=None, help='Trang thai khoi dau, vi du "0.9,0.1"')
    p.add_argument('--query-index', type=int, default=0)
    p.add_argument('--noise', type=float, default=0.1)
    p.add_argument('--tol', type=float, default=1e-8)
    p.add_argument('--max-iter', type=int, default=100)
    p.add_argument('--plot', default=None, help='File HTML bieu do nang luong')
    p.set_defaults(handler=cmd_retrieve)

    p = sub.add_parser('gradcheck', parents=[common], help='Kiem tra gradient toan mo hinh bang sai phan huu han')
    p.add_argument('--data', default=None)
    p.add_argument('--schema', default=None)
    p.add_argument('--config', default=None)
    p.add_argument('--threshold', type=float, default=GRADCHECK_TOLERANCE)
    p.set_defaults(handler=cmd_gradcheck)

    p = sub.add_parser('oracle-nw', parents=[common], help='Kiem chung H_s tuong duong hoi quy Nadaraya-Watson')
    p.add_argument('--cases', type=int, default=50)
    p.set_defaults(handler=cmd_oracle_nw)

    p = sub.add_parser('oracle-adaboost', parents=[common], help='Kiem chung gradient muc tieu AdaBoost')
    p.add_argument('--cases', type=int, default=50)
    p.set_defaults(handler=cmd_oracle_adaboost)

    p = sub.add_parser('make-synthetic', parents=[common], help='Sinh bang du lieu tong hop')
    p.add_argument('--kind', choices=sorted(GENERATORS), default='planted')
    p.add_argument('--out-dir', default=None)
    p.add_argument('--n-samples', type=int, default=None)
    p.set_defaults(handler=cmd_make_synthetic)

    p = sub.add_parser('grid', parents=[common], help='Tim kiem luoi sieu tham so')
    _add_data_arguments(p)
    p.set_defaults(handler=cmd_grid)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    logging.basicConfig(level=getattr(logging, args.log_level), format='%(asctime)s - %(levelname)s - %(message)s',
                        datefmt='%Y-%m-%d %H:%M:%S')
    try:
        return args.handler(args)
    except HopularError as e:
        logger.error(f"[{args.command}] {e}")
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
