"""
Point d'entrée du framework SegCLR.

Exemple :
    python main.py generate --config configs/domains.yaml --out data
    python main.py train --config configs/uda_device.yaml --data data --out runs/uda_device
"""
import sys
from pathlib import Path

# Ajouter la racine du projet au path
sys.path.insert(0, str(Path(__file__).parent))

from src.cli import main


if __name__ == "__main__":
    main()
