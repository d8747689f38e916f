//! Partitioning spectrogram frequency bins into contiguous, non-overlapping
//! subbands, and the exact split/merge of spectrograms along that partition.

use std::ops::Range;

use crate::error::{Error, Result};
use crate::signal::Spectrogram;

/// An ordered partition of `[0, bins)` into contiguous bin ranges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BandScheme {
    /// Band `b` covers bins `edges[b]..edges[b + 1]`.
    edges: Vec<usize>,
}

impl BandScheme {
    /// Splits `bins` into `n_bands` contiguous bands of equal width rounded
    /// up; the last band absorbs the remainder and may be narrower.
    pub fn equal_width(bins: usize, n_bands: usize) -> Result<Self> {
        if n_bands == 0 || bins == 0 {
            return Err(Error::BandScheme(format!(
                "need at least one band and one bin, got {n_bands} bands over {bins} bins"
            )));
        }
        if n_bands > bins {
            return Err(Error::BandScheme(format!(
                "{n_bands} bands cannot partition {bins} bins"
            )));
        }
        let width = bins.div_ceil(n_bands);
        let mut edges = Vec::with_capacity(n_bands + 1);
        for b in 0..n_bands {
            edges.push((b * width).min(bins));
        }
        edges.push(bins);
        // Rounding up can exhaust the bins before the last band; the
        // preconditions above make every band non-empty only when width
        // divides cleanly enough, so verify.
        if edges.windows(2).any(|e| e[0] >= e[1]) {
            return Err(Error::BandScheme(format!(
                "{n_bands} bands of width {width} leave an empty band over {bins} bins"
            )));
        }
        Ok(BandScheme { edges })
    }

    /// Builds a scheme from explicit ranges, which must be sorted, disjoint,
    /// and cover `[0, bins)` without gaps.
    pub fn from_ranges(ranges: &[Range<usize>]) -> Result<Self> {
        if ranges.is_empty() {
            return Err(Error::BandScheme("no bands given".into()));
        }
        let mut edges = Vec::with_capacity(ranges.len() + 1);
        let mut next = 0usize;
        for (i, r) in ranges.iter().enumerate() {
            if r.start != next {
                return Err(Error::BandScheme(format!(
                    "band {i} starts at {} but previous coverage ends at {next} (gap or overlap)",
                    r.start
                )));
            }
            if r.end <= r.start {
                return Err(Error::BandScheme(format!(
                    "band {i} is empty or reversed: {}..{}",
                    r.start, r.end
                )));
            }
            edges.push(r.start);
            next = r.end;
        }
        edges.push(next);
        Ok(BandScheme { edges })
    }

    pub fn num_bands(&self) -> usize {
        self.edges.len() - 1
    }

    /// Total bins covered.
    pub fn bins(&self) -> usize {
        *self.edges.last().unwrap()
    }

    pub fn band(&self, b: usize) -> Range<usize> {
        self.edges[b]..self.edges[b + 1]
    }

    pub fn width(&self, b: usize) -> usize {
        self.edges[b + 1] - self.edges[b]
    }

    pub fn widths(&self) -> Vec<usize> {
        (0..self.num_bands()).map(|b| self.width(b)).collect()
    }
}

/// Slices a spectrogram into per-band spectrograms along the bin axis.
pub fn band_split(s: &Spectrogram, scheme: &BandScheme) -> Result<Vec<Spectrogram>> {
    if scheme.bins() != s.bins() {
        return Err(Error::BandScheme(format!(
            "scheme covers {} bins but spectrogram has {}",
            scheme.bins(),
            s.bins()
        )));
    }
    let frames = s.frames();
    let mut out = Vec::with_capacity(scheme.num_bands());
    for b in 0..scheme.num_bands() {
        let r = scheme.band(b);
        let width = r.len();
        let mut re = Vec::with_capacity(s.num_channels() * width * frames);
        let mut im = Vec::with_capacity(s.num_channels() * width * frames);
        for c in 0..s.num_channels() {
            re.extend_from_slice(&s.channel_re(c)[r.start * frames..r.end * frames]);
            im.extend_from_slice(&s.channel_im(c)[r.start * frames..r.end * frames]);
        }
        out.push(Spectrogram::from_parts(
            s.num_channels(),
            width,
            frames,
            s.sample_rate(),
            re,
            im,
        )?);
    }
    Ok(out)
}

/// Reassembles per-band spectrograms into one; exact inverse of
/// [`band_split`].
pub fn band_merge(bands: &[Spectrogram], scheme: &BandScheme) -> Result<Spectrogram> {
    if bands.len() != scheme.num_bands() {
        return Err(Error::BandScheme(format!(
            "{} band tensors given, scheme has {}",
            bands.len(),
            scheme.num_bands()
        )));
    }
    let first = &bands[0];
    for (b, band) in bands.iter().enumerate() {
        if band.bins() != scheme.width(b) {
            return Err(Error::BandScheme(format!(
                "band {b} has {} bins, scheme expects {}",
                band.bins(),
                scheme.width(b)
            )));
        }
        if band.frames() != first.frames() || band.num_channels() != first.num_channels() {
            return Err(Error::BandScheme(format!(
                "band {b} shape disagrees with band 0"
            )));
        }
    }
    let frames = first.frames();
    let channels = first.num_channels();
    let mut merged = Spectrogram::zeros(channels, scheme.bins(), frames, first.sample_rate());
    for (b, band) in bands.iter().enumerate() {
        let r = scheme.band(b);
        for c in 0..channels {
            merged.channel_re_mut(c)[r.start * frames..r.end * frames]
                .copy_from_slice(band.channel_re(c));
            merged.channel_im_mut(c)[r.start * frames..r.end * frames]
                .copy_from_slice(band.channel_im(c));
        }
    }
    Ok(merged)
}
