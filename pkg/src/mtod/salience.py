"""Input x gradient token attribution with L2 reduction over embedding dims.

The attribution target is the logit (optionally the softmax probability) of
the token at ``target_position``, read from the logits at the position just
before it. Each earlier position's score is the L2 norm of its summed
token+positional embedding multiplied elementwise by the gradient of the
target w.r.t. that embedding; scores are normalized to sum to one over the
positions left of the target.
"""

from __future__ import annotations

import html
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import torch

from .model import TransformerLM


class SalienceError(ValueError):
    pass


@dataclass(frozen=True)
class SalienceMap:
    target_position: int
    target_token: int
    scores: tuple[float, ...]  # aligned to prompt positions < target_position
    degenerate: bool = False  # all-zero attributions replaced by uniform


def input_x_gradient(model: TransformerLM, ids: Sequence[int], target_position: int,
                     use_probability: bool = False) -> SalienceMap:
    n = len(ids)
    if not 0 < target_position <= n - 1:
        raise SalienceError(
            f"target_position must be in [1, {n - 1}], got {target_position}")
    was_training = model.training
    model.eval()
    try:
        tensor = torch.tensor([list(ids)], dtype=torch.long)
        x = model.embed(tensor).detach().requires_grad_(True)
        logits = model.forward_embedded(x)
        target_id = int(ids[target_position])
        row = logits[0, target_position - 1]
        y = torch.softmax(row, dim=-1)[target_id] if use_probability else row[target_id]
        (grad,) = torch.autograd.grad(y, x)
    finally:
        if was_training:
            model.train()

    contrib = (x.detach()[0] * grad[0])[:target_position]
    raw = torch.linalg.vector_norm(contrib, dim=-1)
    total = float(raw.sum())
    if total <= 0.0:
        uniform = 1.0 / target_position
        return SalienceMap(target_position, target_id,
                           tuple(uniform for _ in range(target_position)), degenerate=True)
    return SalienceMap(target_position, target_id,
                       tuple((raw / total).tolist()), degenerate=False)


_HTML_TEMPLATE = """<!DOCTYPE html>
<html>
<head>
<meta charset="utf-8">
<title>Token salience</title>
<style>
body {{ font-family: monospace; margin: 2em; }}
.strip span {{ padding: 4px 6px; margin: 1px; display: inline-block; color: #111; }}
table {{ border-collapse: collapse; margin-top: 1.5em; }}
td, th {{ border: 1px solid #999; padding: 3px 10px; text-align: left; }}
</style>
</head>
<body>
<h1>Salience for target position {target_position} (token id {target_token})</h1>
<p>{note}</p>
<div class="strip">{strip}</div>
<table>
<tr><th>position</th><th>token</th><th>score</th></tr>
{rows}
</table>
</body>
</html>
"""


def render_heatmap(smap: SalienceMap, tokens: Sequence[str], html_path: str | Path,
                   text_path: str | Path | None = None) -> None:
    """Darker cell = higher score; exact values live in the table / text column."""
    if len(tokens) != len(smap.scores):
        raise SalienceError(
            f"{len(tokens)} tokens for {len(smap.scores)} scores")
    peak = max(smap.scores) if smap.scores and max(smap.scores) > 0 else 1.0

    strip = []
    rows = []
    for pos, (token, score) in enumerate(zip(tokens, smap.scores)):
        shade = score / peak
        strip.append(f'<span style="background: rgba(202, 138, 4, {shade:.4f})" '
                     f'title="{score:.6f}">{html.escape(token)}</span>')
        rows.append(f"<tr><td>{pos}</td><td>{html.escape(token)}</td>"
                    f"<td>{score:.6f}</td></tr>")
    note = ("all attributions were zero; uniform fallback scores shown"
            if smap.degenerate else "scores normalized over positions left of the target")
    Path(html_path).write_text(_HTML_TEMPLATE.format(
        target_position=smap.target_position, target_token=smap.target_token,
        note=note, strip="".join(strip), rows="\n".join(rows)), encoding="utf-8")

    if text_path is not None:
        width = max((len(t) for t in tokens), default=5)
        lines = [f"target_position={smap.target_position} "
                 f"target_token={smap.target_token} degenerate={smap.degenerate}"]
        for pos, (token, score) in enumerate(zip(tokens, smap.scores)):
            bar = "#" * round(40 * score / peak)
            lines.append(f"{pos:4d}  {token:<{width}}  {score:.6f}  {bar}")
        Path(text_path).write_text("\n".join(lines) + "\n", encoding="utf-8")
