"""
Dataset Preprocessing Script

Turns a raw CSV into a normalized feature/label bundle:
1. Loads the CSV against its schema (column kinds + label mapping)
2. Drops rows with missing values, one-hot encodes categoricals, scales
   numerics, caps every row at norm 1 and maps labels to +/-1
3. Saves features and labels to a compressed .npz file

Usage:
    python scripts/preprocess_dataset.py data/adult_sample.csv data/adult_schema.json [out.npz]
"""
import sys
from pathlib import Path
from dotenv import load_dotenv

sys.path.insert(0, str(Path(__file__).parent.parent))

import numpy as np

from src.datasets import load_csv, load_schema, preprocess
from src.errors import AdmmError

load_dotenv()


def main():
    if len(sys.argv) < 3:
        print(__doc__)
        return 1

    csv_path, schema_path = Path(sys.argv[1]), Path(sys.argv[2])
    output = Path(sys.argv[3]) if len(sys.argv) > 3 else csv_path.with_suffix(".npz")

    print("\nPreprocessing Dataset\n" + "=" * 60)
    try:
        schema = load_schema(schema_path)
        raw = load_csv(csv_path, schema)
        print(f"✓ Loaded {len(raw)} rows, {len(raw.columns)} columns from {csv_path.name}")
        features, labels = preprocess(raw)
    except AdmmError as e:
        print(f"✗ {e}")
        return 2

    dropped = len(raw) - features.shape[0]
    print(f"✓ Dropped {dropped} rows with missing values")
    print(f"✓ {features.shape[0]} samples, {features.shape[1]} features "
          f"(max row norm {np.linalg.norm(features, axis=1).max():.4f})")
    print(f"  Positive labels: {int((labels > 0).sum())}, negative: {int((labels < 0).sum())}")

    np.savez_compressed(output, features=features, labels=labels)
    print("\n" + "=" * 60)
    print(f"Saved to {output}")
    print("=" * 60)
    return 0


if __name__ == "__main__":
    sys.exit(main())
