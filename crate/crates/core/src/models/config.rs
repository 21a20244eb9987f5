use std::collections::BTreeMap;

use super::ModelError;

/// ResNet generator geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GeneratorConfig {
    pub n_res_blocks: usize,
    pub base_channels: usize,
    pub n_down_up: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub image_size: usize,
}

impl GeneratorConfig {
    pub fn desk() -> Self {
        Self {
            n_res_blocks: 3,
            base_channels: 16,
            n_down_up: 2,
            in_channels: 1,
            out_channels: 1,
            image_size: 64,
        }
    }

    pub fn full() -> Self {
        Self {
            n_res_blocks: 9,
            base_channels: 64,
            n_down_up: 2,
            in_channels: 1,
            out_channels: 1,
            image_size: 256,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let factor = 1usize << self.n_down_up;
        if self.image_size == 0 || self.image_size % factor != 0 {
            return Err(ModelError::Config(format!(
                "image size {} not divisible by 2^{}",
                self.image_size, self.n_down_up
            )));
        }
        if self.base_channels == 0 || self.in_channels == 0 || self.out_channels == 0 {
            return Err(ModelError::Config("channel counts must be positive".into()));
        }
        // the 7×7 reflect-padded stem needs at least 4 pixels
        if self.image_size < 4 {
            return Err(ModelError::Config("image size must be at least 4".into()));
        }
        Ok(())
    }

    /// Trainable scalars: stem, strided convs, residual blocks, transposed convs, head.
    pub fn parameter_count(&self) -> usize {
        let (c, ci, co) = (self.base_channels, self.in_channels, self.out_channels);
        let mut total = ci * c * 49 + c;
        let mut ch = c;
        for _ in 0..self.n_down_up {
            total += ch * 2 * ch * 16 + 2 * ch;
            ch *= 2;
        }
        total += self.n_res_blocks * 2 * (ch * ch * 9 + ch);
        for _ in 0..self.n_down_up {
            total += ch * (ch / 2) * 16 + ch / 2;
            ch /= 2;
        }
        total + ch * co * 49 + co
    }
}

/// PatchGAN discriminator geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DiscriminatorConfig {
    pub n_layers: usize,
    pub base_channels: usize,
    pub in_channels: usize,
    pub image_size: usize,
}

impl DiscriminatorConfig {
    pub fn desk() -> Self {
        Self {
            n_layers: 3,
            base_channels: 16,
            in_channels: 1,
            image_size: 64,
        }
    }

    pub fn full() -> Self {
        Self {
            n_layers: 3,
            base_channels: 64,
            in_channels: 1,
            image_size: 256,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.n_layers == 0 {
            return Err(ModelError::Config("discriminator needs at least one layer".into()));
        }
        let factor = 1usize << self.n_layers;
        if self.image_size % factor != 0 || self.image_size / factor < 3 {
            return Err(ModelError::Config(format!(
                "image size {} too small or not divisible for {} strided layers",
                self.image_size, self.n_layers
            )));
        }
        Ok(())
    }

    /// Side of the output patch map: `n_layers` halvings then two `k=4, p=1` stride-1 convs.
    pub fn output_size(&self) -> usize {
        (self.image_size >> self.n_layers) - 2
    }

    /// Input pixels seen by one output unit.
    pub fn receptive_field(&self) -> usize {
        // walk back from the output: two stride-1 k4 layers, then n_layers stride-2 k4 layers
        let mut field = 1;
        for _ in 0..2 {
            field += 3;
        }
        for _ in 0..self.n_layers {
            field = (field - 1) * 2 + 4;
        }
        field
    }

    pub fn embedding_channels(&self) -> usize {
        self.base_channels * (1 << (self.n_layers - 1).min(3))
    }
}

/// U-Net generator geometry for the paired baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UNetConfig {
    pub depth: usize,
    pub base_channels: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub image_size: usize,
}

impl UNetConfig {
    pub fn desk() -> Self {
        Self {
            depth: 4,
            base_channels: 16,
            in_channels: 1,
            out_channels: 1,
            image_size: 64,
        }
    }

    pub fn full() -> Self {
        Self {
            depth: 8,
            base_channels: 64,
            in_channels: 1,
            out_channels: 1,
            image_size: 256,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.depth < 2 {
            return Err(ModelError::Config("U-Net depth must be at least 2".into()));
        }
        let factor = 1usize << self.depth;
        if self.image_size % factor != 0 {
            return Err(ModelError::Config(format!(
                "image size {} not divisible by 2^{}",
                self.image_size, self.depth
            )));
        }
        Ok(())
    }

    /// Channels at encoder level `i` (0-based): doubling up to 8× base.
    pub fn level_channels(&self, i: usize) -> usize {
        self.base_channels * (1 << i.min(3))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GanMode {
    LeastSquares,
    CrossEntropy,
}

impl GanMode {
    pub fn as_str(self) -> &'static str {
        match self {
            GanMode::LeastSquares => "lsgan",
            GanMode::CrossEntropy => "vanilla",
        }
    }

    pub fn parse(s: &str) -> Result<Self, ModelError> {
        match s {
            "lsgan" => Ok(GanMode::LeastSquares),
            "vanilla" => Ok(GanMode::CrossEntropy),
            other => Err(ModelError::Config(format!("unknown gan mode `{other}`"))),
        }
    }
}

/// Flat `key=value` lines; used for checkpoint headers.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues(pub BTreeMap<String, String>);

impl KeyValues {
    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.0.insert(key.to_owned(), value.to_string());
    }

    pub fn render(&self) -> String {
        self.0.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn parse(text: &str) -> Result<Self, ModelError> {
        let mut map = BTreeMap::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| ModelError::Config(format!("malformed header line `{line}`")))?;
            map.insert(k.trim().to_owned(), v.trim().to_owned());
        }
        Ok(Self(map))
    }

    pub fn get(&self, key: &str) -> Result<&str, ModelError> {
        self.0
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| ModelError::Config(format!("missing header key `{key}`")))
    }

    pub fn num<N: std::str::FromStr>(&self, key: &str) -> Result<N, ModelError> {
        let v = self.get(key)?;
        v.parse()
            .map_err(|_| ModelError::Config(format!("header key `{key}` has bad value `{v}`")))
    }

    pub fn put_generator(&mut self, prefix: &str, g: &GeneratorConfig) {
        self.set(&format!("{prefix}.n_res_blocks"), g.n_res_blocks);
        self.set(&format!("{prefix}.base_channels"), g.base_channels);
        self.set(&format!("{prefix}.n_down_up"), g.n_down_up);
        self.set(&format!("{prefix}.in_channels"), g.in_channels);
        self.set(&format!("{prefix}.out_channels"), g.out_channels);
        self.set(&format!("{prefix}.image_size"), g.image_size);
    }

    pub fn take_generator(&self, prefix: &str) -> Result<GeneratorConfig, ModelError> {
        Ok(GeneratorConfig {
            n_res_blocks: self.num(&format!("{prefix}.n_res_blocks"))?,
            base_channels: self.num(&format!("{prefix}.base_channels"))?,
            n_down_up: self.num(&format!("{prefix}.n_down_up"))?,
            in_channels: self.num(&format!("{prefix}.in_channels"))?,
            out_channels: self.num(&format!("{prefix}.out_channels"))?,
            image_size: self.num(&format!("{prefix}.image_size"))?,
        })
    }

    pub fn put_discriminator(&mut self, prefix: &str, d: &DiscriminatorConfig) {
        self.set(&format!("{prefix}.n_layers"), d.n_layers);
        self.set(&format!("{prefix}.base_channels"), d.base_channels);
        self.set(&format!("{prefix}.in_channels"), d.in_channels);
        self.set(&format!("{prefix}.image_size"), d.image_size);
    }

    pub fn take_discriminator(&self, prefix: &str) -> Result<DiscriminatorConfig, ModelError> {
        Ok(DiscriminatorConfig {
            n_layers: self.num(&format!("{prefix}.n_layers"))?,
            base_channels: self.num(&format!("{prefix}.base_channels"))?,
            in_channels: self.num(&format!("{prefix}.in_channels"))?,
            image_size: self.num(&format!("{prefix}.image_size"))?,
        })
    }

    pub fn put_unet(&mut self, prefix: &str, u: &UNetConfig) {
        self.set(&format!("{prefix}.depth"), u.depth);
        self.set(&format!("{prefix}.base_channels"), u.base_channels);
        self.set(&format!("{prefix}.in_channels"), u.in_channels);
        self.set(&format!("{prefix}.out_channels"), u.out_channels);
        self.set(&format!("{prefix}.image_size"), u.image_size);
    }

    pub fn take_unet(&self, prefix: &str) -> Result<UNetConfig, ModelError> {
        Ok(UNetConfig {
            depth: self.num(&format!("{prefix}.depth"))?,
            base_channels: self.num(&format!("{prefix}.base_channels"))?,
            in_channels: self.num(&format!("{prefix}.in_channels"))?,
            out_channels: self.num(&format!("{prefix}.out_channels"))?,
            image_size: self.num(&format!("{prefix}.image_size"))?,
        })
    }
}
