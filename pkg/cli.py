"""
命令行工具
模拟数据、拟合先验、后验推断、评估、覆盖率实验、交叉验证与敏感性分析
"""

import sys
import time

import click
import numpy as np
from rich.console import Console
from rich.progress import Progress
from rich.table import Table
from loguru import logger

from src.core.config import Config
from src.core.density import KernelSpec
from src.core.exceptions import InputError, MixDensError, NumericalError
from src.core.experiments import (evaluate_density, metrics_record, run_coverage, run_cv,
                                  run_sensitivity)
from src.core.gmodeler import ESTIMATORS, GModeler
from src.core.io import (efron_to_dict, npmle_to_dict, read_data_csv, read_density_csv, read_json,
                         write_data_csv, write_density_csv, write_json, write_posterior_csv,
                         write_samples_csv, write_table_csv)
from src.core.measurement_error import sample_prior
from src.core.mlp import load_model, save_model
from src.core.optimizer import write_trace_csv
from src.core.simulate import SCENARIOS, ScenarioSpec, generate, scenario_truth


console = Console()

EXIT_USAGE = 2
EXIT_INPUT = 3
EXIT_NUMERIC = 4

PRIOR_SAMPLES = 5000


def setup_logging(verbose: bool, level: str = "INFO"):
    """配置日志: --verbose时为DEBUG, 否则使用给定级别(system.log_level)"""
    logger.remove()
    logger.add(sys.stderr, level="DEBUG" if verbose else str(level).upper())


def exit_code(error: Exception) -> int:
    """异常类型到退出码的映射"""
    if isinstance(error, NumericalError):
        return EXIT_NUMERIC
    if isinstance(error, (InputError, ValueError)):
        return EXIT_INPUT
    return 1


def fail(error: Exception):
    console.print(f"[red]✗ 错误: {error}[/red]")
    sys.exit(exit_code(error))


def load_config(config_path, overrides: dict, verbose: bool = False) -> Config:
    """加载配置文件, 命令行参数(非None)覆盖文件中的值, 并按system.log_level重设日志"""
    cfg = Config(config_path)
    cfg.update(overrides)
    try:
        setup_logging(verbose, cfg.get("system.log_level", "INFO"))
    except ValueError as e:
        setup_logging(verbose)
        raise InputError(f"无效的日志级别: {cfg.get('system.log_level')}") from e
    return cfg


def kernel_option(cfg: Config, family, sigma, data) -> KernelSpec:
    """由命令行参数和配置确定核; 成对数据默认使用location_scale核"""
    if family is None:
        family = "location_scale" if np.ndim(data) == 2 else cfg.get("kernel.family", "normal")
    replicates = np.shape(data)[1] if np.ndim(data) == 2 else int(cfg.get("kernel.replicates", 2))
    sigma = float(cfg.get("kernel.sigma", 1.0)) if sigma is None else sigma
    return KernelSpec(family, sigma=sigma, replicates=replicates)


def common_options(func):
    """所有命令共享的选项"""
    func = click.option('--verbose', is_flag=True, help='详细输出')(func)
    func = click.option('--jobs', '-j', type=click.IntRange(1), default=None, help='并行线程数')(func)
    func = click.option('--seed', type=click.IntRange(0), default=None,
                        help='主随机种子(默认读取MIXDENS_SEED或配置)')(func)
    func = click.option('--config', '-c', type=click.Path(exists=True), help='配置文件路径(YAML或JSON)')(func)
    return func


@click.group()
@click.version_option(version="1.0.0")
def cli():
    """混合密度(先验)估计工具包: neural-g、NPMLE与Efron's g"""
    pass


@cli.command()
@click.option('--scenario', '-s', type=click.Choice(list(SCENARIOS)), required=True, help='模拟场景')
@click.option('--n', 'n', type=click.IntRange(1), required=True, help='样本量')
@click.option('--out', '-o', type=click.Path(), required=True, help='数据CSV输出路径')
@click.option('--with-truth', is_flag=True, help='同时输出真实θ列')
@common_options
def simulate(scenario, n, out, with_truth, config, seed, jobs, verbose):
    """生成模拟数据"""
    setup_logging(verbose)
    try:
        cfg = load_config(config, {}, verbose)
        sim = generate(ScenarioSpec(scenario, n, cfg.seed(seed)))
        write_data_csv(out, sim.data, sim.thetas if with_truth else None)
        console.print(f"[green]✓ 已生成 {n} 个观测 ({scenario}):[/green] {out}")
    except MixDensError as e:
        fail(e)


@cli.command()
@click.option('--data', '-d', type=click.Path(exists=True), required=True, help='观测CSV')
@click.option('--estimator', '-e', type=click.Choice(list(ESTIMATORS)), default='neuralg', help='估计器')
@click.option('--kernel', '-k', type=click.Choice(list(KernelSpec.FAMILIES)), default=None, help='核族')
@click.option('--sigma', type=float, default=None, help='normal/lognormal核的尺度参数')
@click.option('--paired', type=click.Choice(['homogeneous', 'heterogeneous']), default=None,
              help='成对观测的路线(默认heterogeneous)')
@click.option('--m', 'm', type=click.IntRange(2), default=None, help='网格点数')
@click.option('--hidden-layers', '-L', type=click.IntRange(1), default=None, help='隐藏层数')
@click.option('--hidden-width', '-H', type=click.IntRange(1), default=None, help='隐藏层宽度')
@click.option('--weight', type=click.FloatRange(0, 1), default=None, help='WAG权重w')
@click.option('--max-epochs', type=click.IntRange(1), default=None, help='最大训练轮数')
@click.option('--batch-size', type=click.IntRange(1), default=None, help='批大小')
@click.option('--step', type=float, default=None, help='基础步长η')
@click.option('--decay', type=float, default=None, help='步长衰减指数')
@click.option('--stop-tol', type=float, default=None, help='停止阈值ε')
@click.option('--stop-lag', type=click.IntRange(1), default=None, help='停止规则滞后c')
@click.option('--df', type=click.IntRange(1), default=None, help="Efron's g自由度p")
@click.option('--lambda', 'lam', type=click.FloatRange(0), default=None, help="Efron's g惩罚参数λ")
@click.option('--out', '-o', type=click.Path(), required=True, help='密度CSV输出路径')
@click.option('--trace', type=click.Path(), default=None, help='训练轨迹CSV输出路径')
@click.option('--model', type=click.Path(), default=None, help='模型JSON输出路径')
@click.option('--init-model', type=click.Path(exists=True), default=None, help='neuralg热启动的模型JSON')
@click.option('--prior-samples', type=click.Path(), default=None, help='先验抽样CSV输出路径')
@click.option('--save-config', type=click.Path(), default=None, help='生效配置的输出路径')
@common_options
def fit(data, estimator, kernel, sigma, paired, m, hidden_layers, hidden_width, weight, max_epochs,
        batch_size, step, decay, stop_tol, stop_lag, df, lam, out, trace, model, init_model,
        prior_samples, save_config, config, seed, jobs, verbose):
    """拟合混合密度"""
    setup_logging(verbose)
    try:
        cfg = load_config(config, {
            "grid.m": m, "multivariate.m": m,
            "neural_g.hidden_layers": hidden_layers, "neural_g.hidden_width": hidden_width,
            "neural_g.weight": weight, "neural_g.max_epochs": max_epochs,
            "neural_g.batch_size": batch_size, "neural_g.base_step": step,
            "neural_g.step_decay": decay, "neural_g.stop_tol": stop_tol,
            "neural_g.stop_lag": stop_lag, "efron.df": df, "efron.lambda": lam,
            "system.num_workers": jobs,
        }, verbose)
        y, _ = read_data_csv(data)
        modeler = GModeler(cfg)
        start = load_model(init_model) if init_model else None

        if np.ndim(y) == 2:
            if kernel not in (None, "location_scale"):
                raise InputError(f"成对观测不能使用{kernel}核")
            if start is not None:
                raise InputError("--init-model只支持一元观测")
            route = paired or "heterogeneous"
            console.print(f"[bold blue]正在拟合:[/bold blue] {data} (估计器={estimator}, 成对路线={route})")
            result = modeler.fit_paired(y, estimator, heterogeneous=route == "heterogeneous",
                                        seed=seed, n_samples=PRIOR_SAMPLES if prior_samples else 0)
        else:
            if paired:
                raise InputError("--paired需要成对观测(y1,y2列)")
            spec = kernel_option(cfg, kernel, sigma, y)
            console.print(f"[bold blue]正在拟合:[/bold blue] {data} (估计器={estimator}, 核={spec.family})")
            result = modeler.fit(y, estimator, spec, seed=seed, init_model=start)
            if result["success"] and prior_samples:
                result["samples"] = sample_prior(result["pmf"], PRIOR_SAMPLES, cfg.seed(seed))
        if not result["success"]:
            raise result["exception"]

        write_density_csv(out, result["pmf"])
        if trace and "trace" in result:
            write_trace_csv(result["trace"], trace)
        if model:
            if estimator == "neuralg":
                save_model(result["model"], model)
            elif estimator == "efron":
                write_json(model, efron_to_dict(result["model"], result["basis"]))
            else:
                write_json(model, npmle_to_dict(result["model"]))
        if prior_samples:
            write_samples_csv(prior_samples, result["samples"])
        if save_config:
            cfg.save(save_config)
        show_fit_summary(result, y.shape[0])
    except MixDensError as e:
        fail(e)


@cli.command()
@click.option('--data', '-d', type=click.Path(exists=True), required=True, help='观测CSV')
@click.option('--density', type=click.Path(exists=True), required=True, help='先验密度CSV')
@click.option('--kernel', '-k', type=click.Choice(['normal', 'poisson', 'lognormal']), default=None, help='核族')
@click.option('--sigma', type=float, default=None, help='normal/lognormal核的尺度参数')
@click.option('--level', type=click.FloatRange(0, 1, min_open=True), default=None, help='可信水平')
@click.option('--out', '-o', type=click.Path(), required=True, help='后验摘要CSV输出路径')
@common_options
def posterior(data, density, kernel, sigma, level, out, config, seed, jobs, verbose):
    """计算后验均值与可信区间"""
    setup_logging(verbose)
    try:
        cfg = load_config(config, {"metrics.level": level, "system.num_workers": jobs}, verbose)
        y, _ = read_data_csv(data)
        if np.ndim(y) != 1:
            raise InputError("posterior命令只支持一元观测")
        prior = read_density_csv(density)
        result = GModeler(cfg).posterior(y, prior, kernel_option(cfg, kernel, sigma, y))
        if not result["success"]:
            raise result["exception"]
        write_posterior_csv(out, y, result["means"], result["intervals"])
        console.print(f"[green]✓ 后验摘要已保存到:[/green] {out}")
    except MixDensError as e:
        fail(e)


def truth_scenario(scenario, truth):
    """从--scenario或--truth(JSON, 含scenario键)确定真实先验"""
    if scenario is None and truth is None:
        raise click.UsageError("需要--scenario或--truth指定真实先验")
    if scenario is None:
        scenario = read_json(truth).get("scenario")
        if scenario not in SCENARIOS:
            raise click.UsageError(f"真实先验文件中的场景无效: {scenario}, 可选: {', '.join(SCENARIOS)}")
    return scenario


@cli.command()
@click.option('--density', type=click.Path(exists=True), required=True, help='估计的密度CSV')
@click.option('--scenario', '-s', type=click.Choice(list(SCENARIOS)), default=None, help='真实先验对应的场景')
@click.option('--truth', type=click.Path(exists=True), default=None, help='真实先验JSON文件')
@click.option('--data', '-d', type=click.Path(exists=True), default=None, help='观测CSV(用于计算MAE)')
@click.option('--estimator', '-e', default=None, help='写入指标的估计器名称')
@click.option('--out', '-o', type=click.Path(), default=None, help='指标JSON输出路径')
@common_options
def evaluate(density, scenario, truth, data, estimator, out, config, seed, jobs, verbose):
    """评估估计的先验"""
    setup_logging(verbose)
    scenario = truth_scenario(scenario, truth)
    try:
        start_time = time.time()
        cfg = load_config(config, {}, verbose)
        prior, spec = scenario_truth(scenario)
        pmf = read_density_csv(density)
        y = read_data_csv(data)[0] if data else None
        record = evaluate_density(pmf, prior, spec, y, cfg)
        record.update({"seed": cfg.seed(seed), "estimator": estimator,
                       "elapsed_seconds": time.time() - start_time})
        record = metrics_record(**record)
        if out:
            write_json(out, record)
        show_metrics(record)
    except MixDensError as e:
        fail(e)


@cli.command()
@click.option('--scenario', '-s', type=click.Choice(list(SCENARIOS)), required=True, help='模拟场景')
@click.option('--n', 'n_list', type=click.IntRange(1), multiple=True, required=True, help='样本量(可重复)')
@click.option('--reps', type=click.IntRange(1), default=20, help='重复次数')
@click.option('--estimator', '-e', type=click.Choice(list(ESTIMATORS)), default='neuralg', help='估计器')
@click.option('--out', '-o', type=click.Path(), required=True, help='覆盖率CSV输出路径')
@common_options
def coverage(scenario, n_list, reps, estimator, out, config, seed, jobs, verbose):
    """后验可信区间覆盖率实验"""
    setup_logging(verbose)
    if scenario.startswith("bi_"):
        raise click.UsageError("覆盖率实验只支持一元场景")
    try:
        cfg = load_config(config, {"system.num_workers": jobs}, verbose)
        with Progress() as progress:
            task = progress.add_task("[cyan]覆盖率实验...", total=len(n_list))
            frame = run_coverage(GModeler(cfg), scenario, list(n_list), reps, cfg.seed(seed),
                                 estimator, n_jobs=jobs or 1,
                                 on_progress=lambda: progress.update(task, advance=1))
        write_table_csv(out, frame)
        show_frame(frame, "覆盖率")
    except MixDensError as e:
        fail(e)


@cli.command()
@click.option('--data', '-d', type=click.Path(exists=True), required=True, help='观测CSV')
@click.option('--estimator', '-e', type=click.Choice(list(ESTIMATORS)), default='npmle', help='估计器')
@click.option('--K', 'K', type=click.IntRange(1), default=None, help='折数(默认读取配置)')
@click.option('--kernel', '-k', type=click.Choice(['normal', 'poisson', 'lognormal']), default=None, help='核族')
@click.option('--sigma', type=float, default=None, help='normal/lognormal核的尺度参数')
@click.option('--m', 'm', type=click.IntRange(2), default=None, help='网格点数')
@click.option('--out', '-o', type=click.Path(), default=None, help='指标JSON输出路径')
@common_options
def cv(data, estimator, K, kernel, sigma, m, out, config, seed, jobs, verbose):
    """K折交叉验证(PLL与χ²-MAE)"""
    setup_logging(verbose)
    try:
        cfg = load_config(config, {"grid.m": m, "metrics.cv_folds": K}, verbose)
        y, _ = read_data_csv(data)
    except MixDensError as e:
        fail(e)
    K = int(cfg.get("metrics.cv_folds", 10))
    if K > y.shape[0]:
        raise click.UsageError(f"折数K={K}大于样本量n={y.shape[0]}")
    try:
        record = run_cv(GModeler(cfg), y, kernel_option(cfg, kernel, sigma, y), estimator, K,
                        cfg.seed(seed), n_jobs=jobs or 1)
        if out:
            write_json(out, record)
        show_metrics(record)
    except MixDensError as e:
        fail(e)


@cli.command()
@click.option('--scenario', '-s', type=click.Choice(list(SCENARIOS)), default='uniform', help='模拟场景')
@click.option('--n', 'n', type=click.IntRange(1), default=1000, help='样本量')
@click.option('--layers', '-L', type=click.IntRange(1), multiple=True, required=True, help='隐藏层数(可重复)')
@click.option('--widths', '-H', type=click.IntRange(1), multiple=True, default=(500,), help='隐藏层宽度(可重复)')
@click.option('--reps', type=click.IntRange(1), default=10, help='重复次数')
@click.option('--out', '-o', type=click.Path(), required=True, help='结果CSV输出路径')
@common_options
def sensitivity(scenario, n, layers, widths, reps, out, config, seed, jobs, verbose):
    """网络深度/宽度敏感性分析"""
    setup_logging(verbose)
    if scenario.startswith("bi_"):
        raise click.UsageError("敏感性分析只支持一元场景")
    try:
        cfg = load_config(config, {"system.num_workers": jobs}, verbose)
        frame = run_sensitivity(GModeler(cfg), scenario, n, list(layers), list(widths), reps,
                                cfg.seed(seed), n_jobs=jobs or 1)
        write_table_csv(out, frame)
        show_frame(frame, "敏感性分析")
    except MixDensError as e:
        fail(e)


def show_fit_summary(result, n):
    """输出拟合汇总"""
    pmf = result["pmf"]
    table = Table(title="拟合结果")
    table.add_column("项目", style="cyan")
    table.add_column("值", style="magenta")
    table.add_row("估计器", str(result.get("estimator")))
    table.add_row("样本量n", str(n))
    table.add_row("网格大小m", str(pmf.size))
    if "route" in result:
        table.add_row("成对路线", result["route"])
    if "sigma2" in result:
        table.add_row("误差方差σ̂²", f"{result['sigma2']:.6g}")
    if "stop_reason" in result:
        table.add_row("停止原因", str(result["stop_reason"]))
        table.add_row("最终损失", f"{result['trace'][-1].full_loss:.6f}")
    if "converged" in result:
        table.add_row("收敛", "是" if result["converged"] else "否")
    table.add_row("耗时(秒)", f"{result.get('processing_time', 0):.2f}")
    console.print(table)
    console.print("[green]✓ 拟合完成![/green]")


def show_metrics(record):
    """输出指标"""
    table = Table(title="评估指标")
    table.add_column("指标", style="cyan")
    table.add_column("值", style="green")
    for key, value in record.items():
        if value is None:
            continue
        table.add_row(key, f"{value:.6g}" if isinstance(value, float) else str(value))
    console.print(table)


def show_frame(frame, title):
    """输出结果表"""
    table = Table(title=title)
    for column in frame.columns:
        table.add_column(str(column), style="cyan")
    for _, row in frame.iterrows():
        table.add_row(*[f"{v:.6g}" if isinstance(v, float) else str(v) for v in row.tolist()])
    console.print(table)


if __name__ == '__main__':
    cli()
