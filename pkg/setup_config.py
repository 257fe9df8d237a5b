#!/usr/bin/env python3
"""
Configuration Setup Script for the HuntFuzz clustered SFI fuzzer
Writes a key=value campaign config file with interactive prompts
"""

import sys
from pathlib import Path
from typing import Callable, Dict, Mapping, Optional

from config import CAMPAIGN_MODES, CLUSTERING_MODES, DISTANCE_TERMS

CAMPAIGN_FIELDS = (
    ("mode", "Campaign mode (" + "/".join(CAMPAIGN_MODES) + ")", "huntfuzz"),
    ("k", "Clustering distance k", "2"),
    ("w1", "Weight of uncovered members (w1)", "0.5"),
    ("w2", "Weight of distance term (w2)", "0.5"),
    ("mutate-threshold", "Inputs per cluster before reselection", "10000"),
    ("clustering-mode", "Clustering mode (" + "/".join(CLUSTERING_MODES) + ")", "strict"),
    ("distance-term", "Distance term (" + "/".join(DISTANCE_TERMS) + ")", "proximity"),
    ("budget", "Budget (<N>execs or <S>s)", "100000execs"),
    ("seed", "RNG seed", "0"),
    ("repeats", "Repeats per bench cell", "1"),
)


def print_header():
    """Print setup header"""
    print("=" * 60)
    print("🔧 HUNTFUZZ - CAMPAIGN CONFIGURATION SETUP")
    print("=" * 60)
    print()


def print_section(title):
    """Print section header"""
    print(f"\n{'='*10} {title} {'='*10}")


def get_user_input(prompt, default=None, ask: Callable[[str], str] = input):
    """Get user input with default value"""
    prompt_text = f"{prompt} [{default}]: " if default else f"{prompt}: "
    user_input = ask(prompt_text).strip()
    return user_input or (default or "")


def collect_campaign_settings(ask: Callable[[str], str] = input) -> Dict[str, str]:
    print_section("Campaign Settings")
    return {key: get_user_input(prompt, default, ask) for key, prompt, default in CAMPAIGN_FIELDS}


def write_config_file(path, values: Mapping[str, str], backup: bool = True) -> Path:
    """Write ``values`` as a key=value campaign config file, keeping a .backup of any old one"""
    config_path = Path(path)
    if backup and config_path.exists():
        backup_path = config_path.with_name(config_path.name + ".backup")
        backup_path.write_text(config_path.read_text())
        print(f"📄 Backed up existing {config_path.name} to {backup_path.name}")

    with open(config_path, 'w') as f:
        f.write("# =============================================================================\n")
        f.write("# HUNTFUZZ CAMPAIGN CONFIGURATION\n")
        f.write("# Generated by setup_config.py; command-line flags override these values\n")
        f.write("# =============================================================================\n")
        for key, value in values.items():
            f.write(f"{key}={value}\n")
    print(f"✅ Configuration saved to {config_path}")
    return config_path


def main(path: Optional[str] = None, ask: Callable[[str], str] = input):
    """Main setup function"""
    print_header()
    print("Press Enter to use default values, or type your own values.")

    values = collect_campaign_settings(ask)

    print_section("Configuration Summary")
    for key, value in values.items():
        print(f"  {key} = {value}")

    target = path or get_user_input("Config file", "campaign.conf", ask)
    confirm = ask("Save this configuration? (y/n): ").lower().strip()
    if confirm in ['y', 'yes']:
        write_config_file(target, values)
        print()
        print("🎉 Configuration setup complete!")
        print(f"Next step: python main.py fuzz --target <program.ir> --config {target}")
    else:
        print("❌ Configuration cancelled")


if __name__ == "__main__":
    try:
        main(sys.argv[1] if len(sys.argv) > 1 else None)
    except KeyboardInterrupt:
        print("\n❌ Setup cancelled by user")
        sys.exit(1)
    except Exception as e:
        print(f"\n❌ Setup failed: {e}")
        sys.exit(1)
