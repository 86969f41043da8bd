//! SUM over a stack container that is read a block of frames at a time.

use std::path::Path;
use std::time::Instant;

use super::{denoise_subspace, resolve_sigma, Factorization, SumConfig, SumReport};
use crate::error::{Error, Result};
use crate::io::{FrameReader, FrameWriter};
use crate::stack::{frame_noise_sigma, median_in_place, NoiseModel, NoiseSource};
use crate::subspace::{randomized_svd_source, reconstruct_column, ColumnSource};

/// A stored stack viewed as its (pixels × frames) matrix, `block_frames`
/// columns per block.
pub struct FileSource {
    reader: FrameReader,
    block_frames: usize,
    buf: Vec<f64>,
}

impl FileSource {
    pub fn open(path: &Path, block_frames: usize) -> Result<Self> {
        Ok(Self {
            reader: FrameReader::open(path)?,
            block_frames: block_frames.max(1),
            buf: Vec::new(),
        })
    }
}

impl ColumnSource for FileSource {
    fn rows(&self) -> usize {
        self.reader.header().width * self.reader.header().height
    }
    fn cols(&self) -> usize {
        self.reader.header().frames
    }
    fn for_each_block(&mut self, f: &mut dyn FnMut(usize, &[f64]) -> Result<()>) -> Result<()> {
        let frames = self.cols();
        let mut first = 0;
        while first < frames {
            let count = self.block_frames.min(frames - first);
            self.reader.read_frames(first, count, &mut self.buf)?;
            f(first, &self.buf)?;
            first += count;
        }
        Ok(())
    }
}

/// SUM with a randomized factorization, never holding more than one block of
/// input frames and the rank-sized factors in memory. Writes the result to
/// `output` and returns the report. Produces the same values as
/// [`super::sum_denoise`] on the loaded stack.
pub fn sum_denoise_streaming(
    input: &Path,
    output: &Path,
    cfg: &SumConfig,
    block_frames: usize,
) -> Result<SumReport> {
    let started = Instant::now();
    cfg.validate()?;
    let Factorization::Randomized {
        rank,
        oversampling,
        power_iters,
        seed,
    } = cfg.factorization
    else {
        return Err(Error::InvalidParameter(
            "streaming requires a randomized factorization".into(),
        ));
    };
    let mut src = FileSource::open(input, block_frames)?;
    let header = src.reader.header().clone();
    let (w, h) = (header.width, header.height);

    let noise = resolve_sigma(cfg, || {
        if w * h < 16 {
            return Err(Error::Dimension(format!(
                "noise estimation needs at least 16 pixels per frame, got {}",
                w * h
            )));
        }
        let mut per_frame = Vec::with_capacity(header.frames);
        src.for_each_block(&mut |_, block| {
            per_frame.extend(block.chunks(w * h).map(|f| frame_noise_sigma(f, w, h)));
            Ok(())
        })?;
        Ok(NoiseModel {
            sigma: median_in_place(&mut per_frame),
            source: NoiseSource::Estimated,
        })
    })?;

    let d = randomized_svd_source(&mut src, rank, oversampling, power_iters, seed)?;
    let factorization_seconds = started.elapsed().as_secs_f64();
    let (coeffs, mut report) = denoise_subspace(&d, noise, cfg, w, h, started, factorization_seconds)?;

    let mut writer = FrameWriter::create(output, header.clone())?;
    let mut frame = vec![0.0; w * h];
    for t in 0..header.frames {
        reconstruct_column(&coeffs, |k| d.v_column(k)[t], &mut frame);
        writer.write_frame(&frame)?;
    }
    writer.finish()?;
    report.total_seconds = started.elapsed().as_secs_f64();
    Ok(report)
}
