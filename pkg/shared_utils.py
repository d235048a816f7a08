import re
import csv
import logging

logger = logging.getLogger(__name__)


class StencilError(Exception):
    """Base class for every error the stencil tools raise on purpose."""
    exit_code = 1


class ValidationError(StencilError):
    """A pipeline result disagreed with its oracle beyond tolerance."""
    exit_code = 1


class UsageError(StencilError):
    """Bad names, bad values or unknown keys supplied by the caller."""
    exit_code = 2


class ReportIOError(StencilError):
    exit_code = 3


class CapacityError(StencilError):
    """A configuration does not fit in a machine resource."""
    exit_code = 4


class LayoutError(StencilError, ValueError):
    exit_code = 2


class AlignmentError(LayoutError):
    pass


class BoundsError(LayoutError):
    pass


class EmptyGridError(LayoutError):
    pass


class ShapeMismatchError(LayoutError):
    pass


class NonFiniteValueError(StencilError, ValueError):
    exit_code = 2


def configure_logging(verbose=False):
    """
    Sets up console logging for the command-line scripts. Library modules
    only create loggers; this is the one place handlers are attached.
    """
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(levelname)s: %(message)s",
        force=True,
    )


def sanitize_filename(filename):
    """
    Removes characters from a string that are not allowed in file names.
    """
    return re.sub(r'[\\/*?:"<>|\n]', '', filename)


def load_sweep_configs(filename):
    """
    Loads sweep rows from the specified CSV file.
    The CSV should have 'method', 'size', 'iterations' and 'scenario' columns;
    'seed' is optional. Returns a list of plain dicts with typed values.
    """
    rows = []
    try:
        with open(filename, mode='r', encoding='utf-8-sig') as infile:
            reader = csv.DictReader(infile)
            missing = {'method', 'size', 'iterations', 'scenario'} - set(reader.fieldnames or [])
            if missing:
                raise UsageError(f"{filename} is missing columns: {', '.join(sorted(missing))}")
            if 'seed' not in reader.fieldnames:
                logger.warning("%s has no 'seed' column. Seed 0 will be used for every row.", filename)

            for row_num, row in enumerate(reader, start=2):
                method = (row.get('method') or '').strip()
                if not method:
                    continue
                try:
                    rows.append({
                        'method': method.lower(),
                        'size': int(row['size']),
                        'iterations': int(row['iterations']),
                        'scenario': row['scenario'].strip().lower(),
                        'seed': int(row.get('seed') or 0),
                    })
                except (TypeError, ValueError) as e:
                    raise UsageError(f"{filename} line {row_num}: {e}") from e
    except FileNotFoundError as e:
        raise UsageError(f"Sweep config file {filename} not found.") from e

    logger.info("Loaded %d sweep configuration(s) from %s", len(rows), filename)
    return rows
