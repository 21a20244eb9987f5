use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Scalar, Tensor};

/// History of generated images shown to a discriminator.
///
/// Until full, every image is stored and returned. Afterwards each query
/// image is, with probability ½, swapped for a random stored one.
#[derive(Debug, Clone)]
pub struct ImagePool<T: Scalar> {
    capacity: usize,
    images: Vec<Vec<T>>,
    rng: ChaCha8Rng,
}

impl<T: Scalar> ImagePool<T> {
    pub fn new(capacity: usize, rng: ChaCha8Rng) -> Self {
        Self {
            capacity,
            images: Vec::with_capacity(capacity),
            rng,
        }
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Returns a detached `N×C×H×W` batch drawn from the query and the history.
    pub fn query(&mut self, batch: &Tensor<T>) -> Tensor<T> {
        if self.capacity == 0 {
            return batch.detach();
        }
        let shape = batch.shape().to_vec();
        let per = shape[1..].iter().product::<usize>();
        let data = batch.to_vec();
        let mut out = Vec::with_capacity(data.len());
        for img in data.chunks(per) {
            if self.images.len() < self.capacity {
                self.images.push(img.to_vec());
                out.extend_from_slice(img);
            } else if self.rng.gen_bool(0.5) {
                let i = self.rng.gen_range(0..self.capacity);
                out.extend_from_slice(&self.images[i]);
                self.images[i] = img.to_vec();
            } else {
                out.extend_from_slice(img);
            }
        }
        Tensor::from_vec(&shape, out).expect("shape preserved")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn zero_capacity_passes_through() {
        let mut pool = ImagePool::<f32>::new(0, ChaCha8Rng::seed_from_u64(0));
        for k in 0..5 {
            let x = Tensor::full(&[1, 1, 2, 2], k as f32);
            assert_eq!(pool.query(&x).to_vec(), x.to_vec());
        }
        assert!(pool.is_empty());
    }

    #[test]
    fn fills_then_mixes_history() {
        let mut pool = ImagePool::<f32>::new(3, ChaCha8Rng::seed_from_u64(1));
        for k in 0..3 {
            let x = Tensor::full(&[1, 1, 1, 2], k as f32);
            assert_eq!(pool.query(&x).to_vec(), x.to_vec());
        }
        assert_eq!(pool.len(), 3);
        let mut swapped = 0;
        for k in 3..103 {
            let out = pool.query(&Tensor::full(&[1, 1, 1, 2], k as f32)).to_vec();
            if out[0] != k as f32 {
                swapped += 1;
            }
        }
        assert!((30..70).contains(&swapped), "{swapped}");
    }
}
