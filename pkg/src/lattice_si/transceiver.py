"""End-to-end lattice transceiver: encoder, receiver front end, decoder.

The encoder presubtracts the filtered interference and the shared dither
from the selected codeword, folds into the coarse Voronoi region and shapes
with the transmit filter.  The receiver applies its filter and the
inflation matrix, then solves an exact closest-point problem on the
inflated fine lattice and reads the message off the decoded coset.

``equivalent_channel_output`` reproduces the receiver front-end output from
the error decomposition (self-noise, residual interference, filtered
noise); the two paths agree as an exact algebraic identity, which makes it
a strong oracle for the whole pipeline.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .lattices import LatticeBasis
from .nested import NestedLatticePair

__all__ = [
    "EncodeRecord",
    "encode",
    "receiver_front_end",
    "decode",
    "equivalent_channel_output",
]


@dataclass(frozen=True)
class EncodeRecord:
    """Everything the encoder produced for one block.

    ``pre_filter`` is the folded symbol (codeword minus filtered interference
    minus dither, reduced to the coarse Voronoi region); ``transmitted`` is
    the channel input after the transmit filter; ``quantizer_point`` is the
    coarse-lattice point absorbed by the folding, so that
    ``pre_filter == quantizer_point + codeword - dither - si_filter @ s``
    holds exactly.
    """

    message_index: int
    codeword: np.ndarray
    dither: np.ndarray
    pre_filter: np.ndarray
    transmitted: np.ndarray
    quantizer_point: np.ndarray


def encode(
    pair: NestedLatticePair,
    tx_filter,
    si_filter,
    message_index,
    interference,
    dither,
    reduce_codeword=True,
) -> EncodeRecord:
    """Encode one message block.

    With ``reduce_codeword=False`` the stored codeword is an unreduced coset
    representative instead of the Voronoi coset leader; the transmitted
    signal is identical either way (the folding absorbs the difference into
    the quantizer point), it just skips one closest-point search per call.
    """
    tx_filter = np.asarray(tx_filter, dtype=float)
    si_filter = np.asarray(si_filter, dtype=float)
    interference = np.asarray(interference, dtype=float).reshape(-1)
    dither = np.asarray(dither, dtype=float).reshape(-1)
    if reduce_codeword:
        codeword = pair.codeword(message_index)
    else:
        codeword = pair.coset_representative(message_index)
    shifted = codeword - si_filter @ interference - dither
    _, quantized = pair.coarse.nearest_point(shifted)
    folded = shifted - quantized
    return EncodeRecord(
        message_index=int(message_index),
        codeword=codeword,
        dither=dither,
        pre_filter=folded,
        transmitted=tx_filter @ folded,
        quantizer_point=-quantized,
    )


def receiver_front_end(received, rx_filter, inflation, dither) -> np.ndarray:
    """Filter the channel output and re-add the shared dither: ``L (F_r y + u)``."""
    received = np.asarray(received, dtype=float).reshape(-1)
    rx_filter = np.asarray(rx_filter, dtype=float)
    inflation = np.asarray(inflation, dtype=float)
    dither = np.asarray(dither, dtype=float).reshape(-1)
    if rx_filter.shape[1] != received.shape[0] or rx_filter.shape[0] != dither.shape[0]:
        raise ValueError("receiver filter dimensions do not match the input")
    return inflation @ (rx_filter @ received + dither)


def decode(processed, inflation, pair: NestedLatticePair):
    """Exact minimum-distance decoding on the inflated fine lattice.

    Returns ``(codeword, message_index)`` where the codeword is the decoded
    coset leader.  The search runs over the whole (infinite) fine lattice;
    the fold onto the codebook happens after minimization, through the coset
    index.
    """
    processed = np.asarray(processed, dtype=float).reshape(-1)
    inflation = np.asarray(inflation, dtype=float)
    # the inflation filter is near-isotropic, so the fine basis reduction
    # stays good for the inflated basis; reusing it skips a reduction per call
    search_basis = LatticeBasis(
        inflation @ pair.fine.generator, reduction=pair.fine.reduction_transform
    )
    b, _ = search_basis.nearest_point(processed)
    index = pair.index_of(pair.fine.generator @ b.astype(float))
    return pair.codeword(index), index


def equivalent_channel_output(record: EncodeRecord, interference, noise, h, context) -> np.ndarray:
    """Receiver front-end output predicted from the error decomposition.

    Rebuilds ``L (c_q + c + e)`` with the error ``e`` assembled from the same
    realizations (folded symbol, interference, noise) the pipeline used.
    Matching :func:`receiver_front_end` on the actual channel output is an
    exact algebraic identity, not a statistical statement.
    """
    interference = np.asarray(interference, dtype=float).reshape(-1)
    noise = np.asarray(noise, dtype=float).reshape(-1)
    h = np.asarray(h, dtype=float)
    rx = context.rx_filter
    self_noise = rx @ context.h_eff_tx - np.eye(rx.shape[0])
    err = (
        self_noise @ record.pre_filter
        + (rx @ h - context.si_filter) @ interference
        + rx @ noise
    )
    return context.inflation @ (record.quantizer_point + record.codeword + err)
