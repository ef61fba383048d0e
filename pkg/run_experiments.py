# Copyright 2026 The Cellopt Authors.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Run association/power-control campaigns.

Usage:
  python run_experiments.py run --config=configs/experiment.py --out=/tmp/run
  python run_experiments.py validate --config=configs/experiment.py:smoke
  python run_experiments.py oracle --config=configs/experiment.py --oracle_count=20

Single keys can be overridden, e.g. --config.campaign.replica_count=5.
Exit codes: 0 success, 1 configuration error, 2 partial failure.
"""

import datetime
import os

from absl import app, flags, logging
from ml_collections.config_flags import config_flags

import campaign

FLAGS = flags.FLAGS

EXIT_OK = 0
EXIT_CONFIG_ERROR = 1
EXIT_PARTIAL_FAILURE = 2

SUBCOMMANDS = ("run", "validate", "oracle")

flags.DEFINE_string(
    "out",
    None,
    "Directory for the campaign CSVs and the config echo.",
)
flags.DEFINE_integer(
    "seed_override",
    None,
    "Replaces scenario.seed and drops any explicit campaign.seeds list.",
)
flags.DEFINE_bool("quiet", False, "Only log warnings and errors.")
flags.DEFINE_integer("oracle_count", 10, "Number of small instances for `oracle`.")

config_flags.DEFINE_config_file(
    "config",
    os.path.join(os.path.dirname(os.path.abspath(__file__)), "configs", "experiment.py"),
    "Experiment configuration",
)


def get_output_dir():
    output_dir = FLAGS.out
    if output_dir is None:
        output_name = "run_{timestamp}".format(
            timestamp=datetime.datetime.now().strftime("%Y%m%d_%H%M"),
        )
        output_dir = os.path.join("~", "cellopt", "output", output_name)
        output_dir = os.path.expanduser(output_dir)
        logging.warning("No --out specified; using %s", output_dir)
    return output_dir


def load_config():
    raw = FLAGS.config.to_dict()
    if FLAGS.seed_override is not None:
        raw["scenario"]["seed"] = FLAGS.seed_override
        raw["campaign"]["seeds"] = ()
    return campaign.validate_config(raw)


def main(argv):
    if len(argv) != 2 or argv[1] not in SUBCOMMANDS:
        raise app.UsageError(f"Expected exactly one subcommand out of {SUBCOMMANDS}.")
    if FLAGS.quiet:
        logging.set_verbosity(logging.WARNING)

    try:
        config = load_config()
    except campaign.ConfigError as e:
        for diagnostic in e.diagnostics:
            logging.error("%s", diagnostic)
        return EXIT_CONFIG_ERROR

    command = argv[1]
    if command == "validate":
        logging.info("Configuration is valid.")
        print(campaign.config_echo(config), end="")
        return EXIT_OK

    try:
        if command == "oracle":
            failed = campaign.run_oracles(config, FLAGS.oracle_count, get_output_dir())
            return EXIT_PARTIAL_FAILURE if failed else EXIT_OK
        report = campaign.run_campaign(config, get_output_dir())
    except campaign.ConfigError as e:
        for diagnostic in e.diagnostics:
            logging.error("%s", diagnostic)
        return EXIT_CONFIG_ERROR

    logging.info(
        "Wrote %d result rows and %d error rows to %s",
        len(report.rows),
        len(report.errors),
        report.output_dir,
    )
    return report.exit_code


if __name__ == "__main__":
    app.run(main)
