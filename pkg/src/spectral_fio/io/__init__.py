"""Result persistence: CSV tables, JSON reports, SVG plots and run manifests."""

from .reporting import ArtifactWriter, RunManifest, sha256_file, svg_line_plot, write_csv, write_json

__all__ = ["ArtifactWriter", "RunManifest", "sha256_file", "svg_line_plot", "write_csv", "write_json"]
