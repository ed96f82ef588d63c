#!/usr/bin/env python3
"""
Experiment driver for the change-detection toolkit
Runs the CLI pipeline for every config in configs/: bounds, energy chain, curves
"""

import subprocess
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parent
BACKEND = ROOT / 'backend'
CONFIGS = ROOT / 'configs'

def run_cli(*args):
    """Run one CLI command from the backend directory; returns its exit code"""
    command = [sys.executable, 'cli.py', *args]
    print(f"▶️  {' '.join(command[1:])}")
    try:
        subprocess.run(command, cwd=BACKEND, check=True)
    except subprocess.CalledProcessError as e:
        print(f"❌ Command failed with exit code {e.returncode}")
        return e.returncode
    return 0

def run_config(config, threads):
    """Bounds table, chain report for energy scenarios, then the simulated curves"""
    name = config.stem
    results = ROOT / 'results'
    results.mkdir(exist_ok=True)
    failures = 0
    failures += run_cli('bounds', '--config', str(config), '--out', str(results / f'{name}_bounds.csv')) != 0
    if 'greedy' in config.read_text():
        failures += run_cli('chain', '--config', str(config), '--out', str(results / f'{name}_chain.json')) != 0
    failures += run_cli('simulate', '--config', str(config), '--threads', str(threads),
                        '--out', str(results / f'{name}.csv')) != 0
    return failures

def main():
    """Main function"""
    threads = sys.argv[1] if len(sys.argv) > 1 else '1'
    configs = sorted(CONFIGS.glob('*.json'))
    print(f"🚀 Running {len(configs)} experiment configs with {threads} worker(s)...")
    print("=" * 60)

    failures = 0
    for config in configs:
        print(f"\n📈 {config.name}")
        failures += run_config(config, threads)

    print("=" * 60)
    if failures:
        print(f"❌ {failures} command(s) failed")
        sys.exit(1)
    print("🎉 All experiments finished; CSV files are in results/")

if __name__ == "__main__":
    main()
