#!/usr/bin/env python3
"""Write .env from .env.template, filling the keys given on the command line."""
import argparse
from pathlib import Path

ENV_KEYS = {
    'data_dir': 'FLASHNET_DATA_DIR',
    'mnist_dir': 'MNIST_DIR',
    'mirror': 'MNIST_MIRROR_URL',
    'config': 'FLASHNET_CONFIG',
    'log_level': 'LOG_LEVEL',
    'workers': 'DEFAULT_WORKERS',
}


def render_env(template: str, values: dict) -> str:
    """Replace `KEY=...` lines of the template; comments and unknown keys pass through."""
    lines = []
    for line in template.splitlines():
        key, sep, _ = line.partition('=')
        if sep and not line.lstrip().startswith('#') and key.strip() in values:
            line = f"{key.strip()}={values[key.strip()]}"
        lines.append(line)
    return "\n".join(lines) + "\n"


def setup_environment(argv=None) -> int:
    """Set up the environment variables for the simulator."""
    parser = argparse.ArgumentParser(description=__doc__)
    for option, key in ENV_KEYS.items():
        parser.add_argument(f"--{option.replace('_', '-')}", dest=option, help=key)
    parser.add_argument('--force', action='store_true', help='overwrite an existing .env')
    args = parser.parse_args(argv)

    project_root = Path(__file__).resolve().parent.parent
    env_file = project_root / '.env'
    if env_file.exists() and not args.force:
        print(f"Error: {env_file} already exists; pass --force to overwrite it")
        return 1

    template_file = project_root / '.env.template'
    if not template_file.exists():
        print("Error: .env.template file not found!")
        return 1

    values = {key: getattr(args, option) for option, key in ENV_KEYS.items() if getattr(args, option) is not None}
    env_file.write_text(render_env(template_file.read_text(), values))

    print("\nEnvironment setup complete!")
    print(f"Configuration saved to: {env_file}")
    return 0


if __name__ == '__main__':
    raise SystemExit(setup_environment())
