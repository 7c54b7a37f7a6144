//! Pipeline composition: apply a module sequence with parameters, cache
//! intermediates, and backpropagate an output gradient to all selected
//! modules' parameters.

use crate::error::{Error, Result};
use crate::image::Image;
use crate::kernels::{kernel_forward, kernel_vjp, ModuleId, TOTAL_PARAMS};

/// Ordered, repetition-free module sequence. An empty sequence is a legal
/// identity pipeline.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PipelineSequence {
    steps: Vec<ModuleId>,
    terminated: bool,
}

impl PipelineSequence {
    pub fn new(steps: Vec<ModuleId>) -> Result<Self> {
        for (i, a) in steps.iter().enumerate() {
            if steps[..i].contains(a) {
                return Err(Error::InvalidSequence(format!(
                    "module {} appears twice",
                    a.name()
                )));
            }
        }
        Ok(PipelineSequence {
            steps,
            terminated: true,
        })
    }

    pub fn empty() -> Self {
        PipelineSequence {
            steps: Vec::new(),
            terminated: true,
        }
    }

    pub fn steps(&self) -> &[ModuleId] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn terminated(&self) -> bool {
        self.terminated
    }

    /// Comma-separated module names in application order.
    pub fn to_text(&self) -> String {
        self.steps
            .iter()
            .map(|m| m.name())
            .collect::<Vec<_>>()
            .join(",")
    }

    /// Parses the textual notation; empty input is the empty pipeline.
    pub fn from_text(text: &str) -> Result<Self> {
        let trimmed = text.trim();
        if trimmed.is_empty() {
            return Ok(PipelineSequence::empty());
        }
        let mut steps = Vec::new();
        for name in trimmed.split(',') {
            let name = name.trim();
            let m = ModuleId::from_name(name)
                .ok_or_else(|| Error::InvalidSequence(format!("unknown module {name:?}")))?;
            steps.push(m);
        }
        PipelineSequence::new(steps)
    }
}

/// All 27 raw parameters in the fixed module order.
#[derive(Clone, Debug, PartialEq)]
pub struct FullParamVector {
    values: Vec<f64>,
}

impl FullParamVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() != TOTAL_PARAMS {
            return Err(Error::DimensionMismatch(format!(
                "param vector has {} values, expected {}",
                values.len(),
                TOTAL_PARAMS
            )));
        }
        Ok(FullParamVector { values })
    }

    pub fn midpoint() -> Self {
        FullParamVector {
            values: vec![0.5; TOTAL_PARAMS],
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn slice(&self, module: ModuleId) -> &[f64] {
        let off = module.param_offset();
        &self.values[off..off + module.param_count()]
    }

    pub fn slice_mut(&mut self, module: ModuleId) -> &mut [f64] {
        let off = module.param_offset();
        &mut self.values[off..off + module.param_count()]
    }
}

/// Reverse-mode cache: the input plus every unclamped intermediate.
/// `inputs[j+1]` is step `j` applied to `inputs[j]`; the last entry is the
/// unclamped final image (the clamp mask is derived from it).
#[derive(Clone, Debug)]
pub struct PipelineTrace {
    pub inputs: Vec<Image>,
    pub sequence: PipelineSequence,
    pub params: FullParamVector,
}

/// Runs the composition left to right (steps[0] first) and clamps the final
/// output to [0,1]. Intermediates are not clamped.
pub fn apply_pipeline(
    img: &Image,
    seq: &PipelineSequence,
    params: &FullParamVector,
) -> (Image, PipelineTrace) {
    let mut inputs = Vec::with_capacity(seq.len() + 1);
    inputs.push(img.clone());
    for &m in seq.steps() {
        let next = kernel_forward(m, inputs.last().unwrap(), params.slice(m));
        inputs.push(next);
    }
    let output = crate::image::clamp01(inputs.last().unwrap());
    let trace = PipelineTrace {
        inputs,
        sequence: seq.clone(),
        params: params.clone(),
    };
    (output, trace)
}

/// Chains kernel VJPs from the last step down to the first. The upstream
/// gradient is first masked by the final clamp (zero where the unclamped
/// output fell outside [0,1]). Slices of unselected modules stay exactly
/// zero.
pub fn pipeline_backward(trace: &PipelineTrace, upstream: &Image) -> Vec<f64> {
    let k = trace.sequence.len();
    let unclamped = &trace.inputs[k];
    assert!(upstream.same_shape(unclamped));

    let mut grad = upstream.clone();
    for (g, &v) in grad.data_mut().iter_mut().zip(unclamped.data()) {
        if !(0.0..=1.0).contains(&v) {
            *g = 0.0;
        }
    }

    let mut d_params = vec![0.0; TOTAL_PARAMS];
    for j in (0..k).rev() {
        let m = trace.sequence.steps()[j];
        let kg = kernel_vjp(m, &trace.inputs[j], trace.params.slice(m), &grad);
        let off = m.param_offset();
        for (slot, g) in d_params[off..off + m.param_count()]
            .iter_mut()
            .zip(&kg.d_params)
        {
            *slot += g;
        }
        grad = kg.d_input;
    }
    d_params
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::{clamp01, mse};
    use crate::rng::{stream, Purpose};
    use rand::Rng;

    fn random_image(seed: u64, h: usize, w: usize) -> Image {
        let mut rng = stream(seed, Purpose::DataGen, 50, 0);
        Image::from_fn(h, w, |_, _, _| rng.gen_range(0.05..0.95))
    }

    #[test]
    fn duplicate_module_rejected() {
        assert!(PipelineSequence::new(vec![ModuleId::Exposure, ModuleId::Exposure]).is_err());
    }

    #[test]
    fn text_round_trip() {
        let seq = PipelineSequence::new(vec![
            ModuleId::Exposure,
            ModuleId::WhiteBalance,
            ModuleId::Gamma,
        ])
        .unwrap();
        assert_eq!(seq.to_text(), "Exposure,WhiteBalance,Gamma");
        assert_eq!(PipelineSequence::from_text(&seq.to_text()).unwrap(), seq);
        assert_eq!(
            PipelineSequence::from_text("").unwrap(),
            PipelineSequence::empty()
        );
        assert!(PipelineSequence::from_text("Nope").is_err());
    }

    #[test]
    fn empty_sequence_is_clamped_identity() {
        let img = Image::from_vec(1, 1, vec![0.5, 1.5, -0.5]).unwrap();
        let (out, trace) = apply_pipeline(&img, &PipelineSequence::empty(), &FullParamVector::midpoint());
        assert_eq!(out, clamp01(&img));
        assert_eq!(trace.inputs.len(), 1);

        let grad = pipeline_backward(&trace, &Image::constant(1, 1, 1.0));
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn midpoint_exposure_is_identity() {
        let img = random_image(1, 4, 4);
        let seq = PipelineSequence::new(vec![ModuleId::Exposure]).unwrap();
        let (out, _) = apply_pipeline(&img, &seq, &FullParamVector::midpoint());
        for (a, b) in out.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn composition_order_matters() {
        // Exposure(θ=1) then Gamma(θ=1) vs the reverse on value 0.25.
        let img = Image::constant(1, 1, 0.25);
        let mut params = FullParamVector::midpoint();
        params.slice_mut(ModuleId::Exposure)[0] = 1.0;
        params.slice_mut(ModuleId::Gamma)[0] = 1.0;

        let eg = PipelineSequence::new(vec![ModuleId::Exposure, ModuleId::Gamma]).unwrap();
        let ge = PipelineSequence::new(vec![ModuleId::Gamma, ModuleId::Exposure]).unwrap();
        let (out_eg, trace_eg) = apply_pipeline(&img, &eg, &params);
        let (out_ge, _) = apply_pipeline(&img, &ge, &params);

        // exposure first: (2^3.5·0.25)^3 = 22.63 pre-clamp
        assert!((trace_eg.inputs[2].get(0, 0, 0) - 22.627417).abs() < 1e-5);
        assert_eq!(out_eg.get(0, 0, 0), 1.0);
        // gamma first: 2^3.5·0.25³ = 0.176777
        assert!((out_ge.get(0, 0, 0) - 0.176777).abs() < 1e-6);
        assert_ne!(out_eg.get(0, 0, 0), out_ge.get(0, 0, 0));
    }

    #[test]
    fn determinism() {
        let img = random_image(2, 8, 8);
        let seq = PipelineSequence::new(vec![
            ModuleId::Contrast,
            ModuleId::Saturation,
            ModuleId::ToneMap,
        ])
        .unwrap();
        let params = FullParamVector::new((0..27).map(|i| 0.2 + 0.02 * i as f64).collect()).unwrap();
        let (a, _) = apply_pipeline(&img, &seq, &params);
        let (b, _) = apply_pipeline(&img, &seq, &params);
        assert_eq!(a, b);
    }

    #[test]
    fn single_desaturation_backward() {
        let img = random_image(3, 4, 4);
        let seq = PipelineSequence::new(vec![ModuleId::Desaturation]).unwrap();
        let mut params = FullParamVector::midpoint();
        params.slice_mut(ModuleId::Desaturation)[0] = 0.4;
        let (_, trace) = apply_pipeline(&img, &seq, &params);
        let grad = pipeline_backward(&trace, &Image::constant(4, 4, 1.0));

        let mut expect = 0.0;
        for y in 0..4 {
            for x in 0..4 {
                let p = img.pixel(y, x);
                let lum = crate::image::luminance(p);
                for c in 0..3 {
                    expect += lum - p[c];
                }
            }
        }
        let off = ModuleId::Desaturation.param_offset();
        assert!((grad[off] - expect).abs() < 1e-9);
        for (i, &g) in grad.iter().enumerate() {
            if i != off {
                assert_eq!(g, 0.0, "unselected slice must stay zero");
            }
        }
    }

    /// Full-pipeline gradient vs central finite differences of an MSE loss,
    /// over all 27 entries.
    #[test]
    fn pipeline_gradient_matches_finite_differences() {
        let img = random_image(4, 8, 8);
        let target = random_image(5, 8, 8);
        let seq = PipelineSequence::new(vec![
            ModuleId::Exposure,
            ModuleId::WhiteBalance,
            ModuleId::Gamma,
            ModuleId::Contrast,
            ModuleId::SharpenBlur,
        ])
        .unwrap();
        let mut rng = stream(6, Purpose::DataGen, 1, 1);
        let params =
            FullParamVector::new((0..27).map(|_| rng.gen_range(0.3..0.7)).collect()).unwrap();

        let loss = |p: &FullParamVector| -> f64 {
            let (out, _) = apply_pipeline(&img, &seq, p);
            mse(&out, &target).unwrap()
        };

        let (out, trace) = apply_pipeline(&img, &seq, &params);
        // d mse / d out = 2 (out - target) / N
        let n = out.data().len() as f64;
        let upstream = Image::from_vec(
            8,
            8,
            out.data()
                .iter()
                .zip(target.data())
                .map(|(&o, &t)| 2.0 * (o - t) / n)
                .collect(),
        )
        .unwrap();
        let analytic = pipeline_backward(&trace, &upstream);

        let h = 1e-5;
        for i in 0..27 {
            let mut p = params.clone();
            p.values[i] += h;
            let lp = loss(&p);
            p.values[i] -= 2.0 * h;
            let lm = loss(&p);
            let fd = (lp - lm) / (2.0 * h);
            let a = analytic[i];
            assert!(
                (a - fd).abs() <= 1e-4 * a.abs().max(fd.abs()) + 1e-8,
                "param {i}: analytic {a} vs fd {fd}"
            );
        }
    }

    #[test]
    fn output_always_in_unit_range() {
        let img = random_image(7, 6, 6);
        let seq = PipelineSequence::new(vec![ModuleId::Exposure, ModuleId::ColorCorrection]).unwrap();
        let mut rng = stream(8, Purpose::DataGen, 2, 2);
        for _ in 0..20 {
            let params =
                FullParamVector::new((0..27).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
            let (out, _) = apply_pipeline(&img, &seq, &params);
            assert!(out.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }
}
