//! Auxiliary facial-expression classifiers used by the emotion consistency metric.
//!
//! Built-in plugins are selected by name (`toy:<seed>`). External classifiers
//! run as child processes speaking a line protocol: the parent writes one image
//! path per line on stdin, the child answers with one line of comma-separated
//! class probabilities.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};

use candle_core::{DType, Device, Tensor};

use crate::data::{bicubic_resize, ImageTensor};
use crate::error::{Error, Result};
use crate::nn::softmax;
use crate::params::rng_for;

pub const DEFAULT_CLASSES: usize = 7;

/// Class probabilities: non-negative, summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceVector(Vec<f64>);

impl ConfidenceVector {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() || probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::DataIntegrity(format!("invalid class probabilities {probs:?}")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::DataIntegrity(format!("class probabilities sum to {sum}")));
        }
        Ok(Self(probs))
    }

    /// Softmax of raw logits.
    pub fn from_logits(logits: &[f64]) -> Result<Self> {
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let s: f64 = e.iter().sum();
        Self::new(e.into_iter().map(|v| v / s).collect())
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn num_classes(&self) -> usize {
        self.0.len()
    }
}

pub trait FerPlugin {
    fn name(&self) -> &str;
    fn num_classes(&self) -> usize;
    /// Classify the single image in a batch of one.
    fn classify(&mut self, img: &ImageTensor) -> Result<ConfidenceVector>;
}

/// Classify with error context naming the plugin and sample.
pub fn classify(img: &ImageTensor, plugin: &mut dyn FerPlugin, sample: &str) -> Result<ConfidenceVector> {
    if img.batch() != 1 {
        return Err(Error::Shape(format!("classify expects one image, got {}", img.batch())));
    }
    let wrap = |message: String, name: &str| Error::Plugin {
        plugin: name.to_string(),
        sample: sample.to_string(),
        message,
    };
    let name = plugin.name().to_string();
    let cv = plugin.classify(img).map_err(|e| match e {
        Error::Plugin { .. } => e,
        other => wrap(other.to_string(), &name),
    })?;
    if cv.num_classes() != plugin.num_classes() {
        return Err(wrap(
            format!(
                "returned {} classes, expected {}",
                cv.num_classes(),
                plugin.num_classes()
            ),
            &name,
        ));
    }
    Ok(cv)
}

/// Small frozen convolutional classifier with seeded weights:
/// 32x32 input, two stride-2 3x3 convs (8, 16 channels), global pooling, linear head.
pub struct ToyClassifier {
    name: String,
    conv1: Tensor,
    conv2: Tensor,
    head_w: Tensor,
    head_b: Tensor,
}

pub const TOY_INPUT: usize = 32;

impl ToyClassifier {
    pub fn new(seed: u64) -> Self {
        let make = |name: &str, shape: &[usize], fan_in: usize| {
            use rand::Rng;
            let mut rng = rng_for(seed, name);
            let bound = (6.0 / fan_in as f64).sqrt();
            let n: usize = shape.iter().product();
            let v: Vec<f64> = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
            Tensor::from_vec(v, shape, &Device::Cpu).expect("shape matches length")
        };
        Self {
            name: format!("toy:{seed}"),
            conv1: make("fer.conv1", &[8, 3, 3, 3], 27),
            conv2: make("fer.conv2", &[16, 8, 3, 3], 72),
            head_w: make("fer.head.weight", &[DEFAULT_CLASSES, 16], 16),
            head_b: make("fer.head.bias", &[DEFAULT_CLASSES], 16),
        }
    }

    /// Same feature stack with an all-zero head (uniform predictions).
    pub fn with_zero_head(seed: u64) -> Self {
        let mut c = Self::new(seed);
        c.head_w = c.head_w.zeros_like().expect("cpu tensor");
        c.head_b = c.head_b.zeros_like().expect("cpu tensor");
        c
    }

    pub fn weights(&self) -> Vec<f64> {
        [&self.conv1, &self.conv2, &self.head_w, &self.head_b]
            .iter()
            .flat_map(|t| t.flatten_all().and_then(|t| t.to_vec1::<f64>()).unwrap_or_default())
            .collect()
    }

    fn logits(&self, img: &ImageTensor) -> Result<Tensor> {
        let x = bicubic_resize(img, TOY_INPUT, TOY_INPUT)?
            .into_tensor()
            .to_dtype(DType::F64)?;
        let x = x.conv2d(&self.conv1, 1, 2, 1, 1)?.relu()?;
        let x = x.conv2d(&self.conv2, 1, 2, 1, 1)?.relu()?;
        let pooled = x.mean((2, 3))?;
        Ok(pooled.matmul(&self.head_w.t()?)?.broadcast_add(&self.head_b)?)
    }
}

/// `toy:<seed>` builds a [`ToyClassifier`].
pub fn toy_classifier(seed: u64) -> ToyClassifier {
    ToyClassifier::new(seed)
}

impl FerPlugin for ToyClassifier {
    fn name(&self) -> &str {
        &self.name
    }

    fn num_classes(&self) -> usize {
        DEFAULT_CLASSES
    }

    fn classify(&mut self, img: &ImageTensor) -> Result<ConfidenceVector> {
        let probs = softmax(&self.logits(img)?, 1)?.squeeze(0)?.to_vec1::<f64>()?;
        ConfidenceVector::new(probs)
    }
}

/// Format a probability vector as one protocol response line (no newline).
pub fn format_response(cv: &ConfidenceVector) -> String {
    cv.probs().iter().map(|p| format!("{p}")).collect::<Vec<_>>().join(",")
}

pub fn parse_response(line: &str) -> Result<ConfidenceVector> {
    let probs = line
        .trim()
        .split(',')
        .map(|f| {
            f.trim()
                .parse::<f64>()
                .map_err(|e| Error::DataIntegrity(format!("bad probability `{f}`: {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    ConfidenceVector::new(probs)
}

/// External classifier process speaking the line protocol.
pub struct SubprocessPlugin {
    name: String,
    num_classes: usize,
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
    scratch: tempfile::TempDir,
    counter: usize,
}

impl SubprocessPlugin {
    /// `command` is split on whitespace; the first word is the program.
    pub fn spawn(command: &str, num_classes: usize) -> Result<Self> {
        let mut words = command.split_whitespace();
        let program = words
            .next()
            .ok_or_else(|| Error::Config("empty plugin command".into()))?;
        let mut child = Command::new(program)
            .args(words)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| Error::io(program, e))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        let scratch = tempfile::tempdir().map_err(|e| Error::io(std::env::temp_dir(), e))?;
        Ok(Self {
            name: format!("cmd:{command}"),
            num_classes,
            child,
            stdin,
            stdout,
            scratch,
            counter: 0,
        })
    }

    /// Send an existing image file and read back the probabilities.
    pub fn classify_path(&mut self, path: &Path) -> Result<ConfidenceVector> {
        let fail = |message: String| Error::Plugin {
            plugin: self.name.clone(),
            sample: path.display().to_string(),
            message,
        };
        writeln!(self.stdin, "{}", path.display()).map_err(|e| fail(e.to_string()))?;
        self.stdin.flush().map_err(|e| fail(e.to_string()))?;
        let mut line = String::new();
        let n = self.stdout.read_line(&mut line).map_err(|e| fail(e.to_string()))?;
        if n == 0 {
            return Err(fail("plugin closed its output".into()));
        }
        parse_response(&line).map_err(|e| fail(e.to_string()))
    }
}

impl FerPlugin for SubprocessPlugin {
    fn name(&self) -> &str {
        &self.name
    }

    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn classify(&mut self, img: &ImageTensor) -> Result<ConfidenceVector> {
        let path = self.scratch.path().join(format!("img{}.png", self.counter));
        self.counter += 1;
        img.save_png(&path)?;
        let out = self.classify_path(&path);
        let _ = std::fs::remove_file(&path);
        out
    }
}

impl Drop for SubprocessPlugin {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Resolve a plugin spec: `toy:<seed>` or `cmd:<command line>`.
pub fn plugin_from_spec(spec: &str) -> Result<Box<dyn FerPlugin>> {
    if let Some(seed) = spec.strip_prefix("toy:") {
        let seed = seed
            .parse::<u64>()
            .map_err(|_| Error::Config(format!("bad toy plugin seed in `{spec}`")))?;
        return Ok(Box::new(ToyClassifier::new(seed)));
    }
    if let Some(cmd) = spec.strip_prefix("cmd:") {
        return Ok(Box::new(SubprocessPlugin::spawn(cmd, DEFAULT_CLASSES)?));
    }
    Err(Error::Config(format!(
        "unknown plugin `{spec}` (expected toy:<seed> or cmd:<command>)"
    )))
}

/// Serve the line protocol on the given streams with `plugin` until EOF.
pub fn serve(plugin: &mut dyn FerPlugin, input: impl BufRead, mut output: impl Write) -> Result<()> {
    for line in input.lines() {
        let line = line.map_err(|e| Error::io("<stdin>", e))?;
        let path = line.trim();
        if path.is_empty() {
            continue;
        }
        let img = ImageTensor::load(Path::new(path))?;
        let cv = plugin.classify(&img)?;
        writeln!(output, "{}", format_response(&cv)).map_err(|e| Error::io("<stdout>", e))?;
        output.flush().map_err(|e| Error::io("<stdout>", e))?;
    }
    Ok(())
}
