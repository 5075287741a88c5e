use ndarray::{Array1, Array2, Array3, Array4, Axis};
use rand::Rng;

use super::ops::{conv2d, conv2d_backward, sigmoid, Padding};
use super::params::{he_normal, Grads, ParamId, Params};

/// Convolution layer whose weights live in a shared [`Params`] store.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub kernel: usize,
    pub padding: Padding,
}

impl Conv2d {
    pub fn new(params: &mut Params, name: &str, cin: usize, cout: usize, kernel: usize, rng: &mut impl Rng) -> Self {
        let weight = params.add(
            format!("{name}.weight"),
            he_normal(&[cout, cin, kernel, kernel], cin * kernel * kernel, rng),
        );
        let bias = params.add(format!("{name}.bias"), Array1::<f64>::zeros(cout));
        Conv2d {
            weight,
            bias,
            kernel,
            padding: Padding::Zero,
        }
    }

    pub fn forward(&self, p: &Params, x: &Array4<f64>) -> Array4<f64> {
        conv2d(x.view(), p.view4(self.weight), p.view1(self.bias), self.padding)
    }

    pub fn backward(&self, p: &Params, x: &Array4<f64>, dy: &Array4<f64>, g: &mut Grads, need_dx: bool) -> Option<Array4<f64>> {
        let (dx, dw, db) = conv2d_backward(x.view(), p.view4(self.weight), dy.view(), self.padding, need_dx);
        g.accumulate(self.weight, &dw);
        g.accumulate(self.bias, &db);
        dx
    }
}

fn dense(w: &ndarray::ArrayView2<f64>, b: &ndarray::ArrayView1<f64>, x: &Array2<f64>) -> Array2<f64> {
    x.dot(&w.t()) + b
}

/// Channel attention: a shared two-layer MLP over spatially average- and
/// max-pooled descriptors, summed and squashed into one weight per channel.
#[derive(Debug, Clone)]
pub struct ChannelAttention {
    pub fc1_w: ParamId,
    pub fc1_b: ParamId,
    pub fc2_w: ParamId,
    pub fc2_b: ParamId,
}

/// Position attention: a K×K convolution over the channel-wise mean and max
/// maps, squashed into one weight per spatial site.
#[derive(Debug, Clone)]
pub struct PositionAttention {
    pub conv: Conv2d,
}

/// Intermediates of [`AttentionFusion::forward`] needed for the backward pass.
#[derive(Debug, Clone)]
pub struct AttentionCache {
    /// N×C, in (0, 1).
    pub channel_weights: Array2<f64>,
    /// N×H×W, in (0, 1).
    pub position_weights: Array3<f64>,
    pooled: [Array2<f64>; 2],
    hidden: [Array2<f64>; 2],
    max_at: Array2<(usize, usize)>,
    descriptor: Array4<f64>,
    channel_max_at: Array3<usize>,
}

/// Parallel channel and position attention fused by summation.
#[derive(Debug, Clone)]
pub struct AttentionFusion {
    pub channel: ChannelAttention,
    pub position: PositionAttention,
}

impl AttentionFusion {
    pub fn new(params: &mut Params, name: &str, channels: usize, reduction: usize, kernel: usize, rng: &mut impl Rng) -> Self {
        let hidden = (channels / reduction.max(1)).max(1);
        let channel = ChannelAttention {
            fc1_w: params.add(format!("{name}.cam.fc1.weight"), he_normal(&[hidden, channels], channels, rng)),
            fc1_b: params.add(format!("{name}.cam.fc1.bias"), Array1::<f64>::zeros(hidden)),
            fc2_w: params.add(format!("{name}.cam.fc2.weight"), he_normal(&[channels, hidden], hidden, rng)),
            fc2_b: params.add(format!("{name}.cam.fc2.bias"), Array1::<f64>::zeros(channels)),
        };
        let position = PositionAttention {
            conv: Conv2d::new(params, &format!("{name}.pam.conv"), 2, 1, kernel, rng),
        };
        AttentionFusion { channel, position }
    }

    /// `x * w_channel + x * w_position`, same shape as `x`.
    pub fn forward(&self, p: &Params, x: &Array4<f64>) -> (Array4<f64>, AttentionCache) {
        let (n, c, h, w) = x.dim();
        let hw = (h * w) as f64;

        // channel branch
        let avg = x.sum_axis(Axis(3)).sum_axis(Axis(2)) / hw;
        let mut mx = Array2::from_elem((n, c), f64::NEG_INFINITY);
        let mut max_at = Array2::from_elem((n, c), (0, 0));
        for ((b, ch, y, xx), &v) in x.indexed_iter() {
            if v > mx[[b, ch]] {
                mx[[b, ch]] = v;
                max_at[[b, ch]] = (y, xx);
            }
        }
        let (w1, b1, w2, b2) = (
            p.view2(self.channel.fc1_w),
            p.view1(self.channel.fc1_b),
            p.view2(self.channel.fc2_w),
            p.view1(self.channel.fc2_b),
        );
        let h_avg = dense(&w1, &b1, &avg).mapv(|v| v.max(0.0));
        let h_max = dense(&w1, &b1, &mx).mapv(|v| v.max(0.0));
        let logits = dense(&w2, &b2, &h_avg) + dense(&w2, &b2, &h_max);
        let channel_weights = logits.mapv(sigmoid);

        // position branch
        let mut descriptor = Array4::zeros((n, 2, h, w));
        let mut channel_max_at = Array3::zeros((n, h, w));
        for b in 0..n {
            for y in 0..h {
                for xx in 0..w {
                    let mut sum = 0.0;
                    let (mut best, mut arg) = (f64::NEG_INFINITY, 0);
                    for ch in 0..c {
                        let v = x[[b, ch, y, xx]];
                        sum += v;
                        if v > best {
                            best = v;
                            arg = ch;
                        }
                    }
                    descriptor[[b, 0, y, xx]] = sum / c as f64;
                    descriptor[[b, 1, y, xx]] = best;
                    channel_max_at[[b, y, xx]] = arg;
                }
            }
        }
        let position_weights = self
            .position
            .conv
            .forward(p, &descriptor)
            .index_axis_move(Axis(1), 0)
            .mapv(sigmoid);

        let out = Array4::from_shape_fn((n, c, h, w), |(b, ch, y, xx)| {
            let v = x[[b, ch, y, xx]];
            v * channel_weights[[b, ch]] + v * position_weights[[b, y, xx]]
        });
        let cache = AttentionCache {
            channel_weights,
            position_weights,
            pooled: [avg, mx],
            hidden: [h_avg, h_max],
            max_at,
            descriptor,
            channel_max_at,
        };
        (out, cache)
    }

    pub fn backward(&self, p: &Params, x: &Array4<f64>, cache: &AttentionCache, dy: &Array4<f64>, g: &mut Grads) -> Array4<f64> {
        let (n, c, h, w) = x.dim();
        let hw = (h * w) as f64;
        let wc = &cache.channel_weights;
        let ws = &cache.position_weights;

        let mut dx = Array4::from_shape_fn((n, c, h, w), |(b, ch, y, xx)| {
            dy[[b, ch, y, xx]] * (wc[[b, ch]] + ws[[b, y, xx]])
        });

        // channel branch
        let mut dwc = Array2::<f64>::zeros((n, c));
        let mut dws = Array3::<f64>::zeros((n, h, w));
        for ((b, ch, y, xx), &d) in dy.indexed_iter() {
            let v = x[[b, ch, y, xx]];
            dwc[[b, ch]] += d * v;
            dws[[b, y, xx]] += d * v;
        }
        let dlogits = &dwc * &wc.mapv(|s| s * (1.0 - s));
        let (w1, w2) = (p.view2(self.channel.fc1_w), p.view2(self.channel.fc2_w));
        let mut dw1 = Array2::zeros(w1.raw_dim());
        let mut db1 = Array1::zeros(w1.nrows());
        let mut dw2 = Array2::zeros(w2.raw_dim());
        let mut db2 = Array1::zeros(w2.nrows());
        let mut dpooled = [Array2::zeros((n, c)), Array2::zeros((n, c))];
        for k in 0..2 {
            dw2 += &dlogits.t().dot(&cache.hidden[k]);
            db2 += &dlogits.sum_axis(Axis(0));
            let mut dh = dlogits.dot(&w2);
            dh.zip_mut_with(&cache.hidden[k], |d, &hv| {
                if hv <= 0.0 {
                    *d = 0.0
                }
            });
            dw1 += &dh.t().dot(&cache.pooled[k]);
            db1 += &dh.sum_axis(Axis(0));
            dpooled[k] = dh.dot(&w1);
        }
        g.accumulate(self.channel.fc1_w, &dw1);
        g.accumulate(self.channel.fc1_b, &db1);
        g.accumulate(self.channel.fc2_w, &dw2);
        g.accumulate(self.channel.fc2_b, &db2);
        for b in 0..n {
            for ch in 0..c {
                let davg = dpooled[0][[b, ch]] / hw;
                dx.slice_mut(ndarray::s![b, ch, .., ..]).mapv_inplace(|v| v + davg);
                let (y, xx) = cache.max_at[[b, ch]];
                dx[[b, ch, y, xx]] += dpooled[1][[b, ch]];
            }
        }

        // position branch
        let dz = (&dws * &ws.mapv(|s| s * (1.0 - s))).insert_axis(Axis(1));
        let ddesc = self
            .position
            .conv
            .backward(p, &cache.descriptor, &dz, g, true)
            .expect("dx requested");
        for b in 0..n {
            for y in 0..h {
                for xx in 0..w {
                    let dmean = ddesc[[b, 0, y, xx]] / c as f64;
                    for ch in 0..c {
                        dx[[b, ch, y, xx]] += dmean;
                    }
                    dx[[b, cache.channel_max_at[[b, y, xx]], y, xx]] += ddesc[[b, 1, y, xx]];
                }
            }
        }
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};

    fn random(shape: (usize, usize, usize, usize), seed: u64) -> Array4<f64> {
        let mut rng = stream(seed, Purpose::GradCheck, 1);
        Array4::from_shape_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    fn setup() -> (Params, AttentionFusion) {
        let mut params = Params::default();
        let att = AttentionFusion::new(&mut params, "att", 6, 2, 3, &mut stream(3, Purpose::Init, 0));
        (params, att)
    }

    #[test]
    fn shape_preserved_and_weights_open_unit_interval() {
        let (params, att) = setup();
        let x = random((2, 6, 4, 5), 1);
        let (y, cache) = att.forward(&params, &x);
        assert_eq!(y.dim(), x.dim());
        assert!(cache.channel_weights.iter().all(|&v| v > 0.0 && v < 1.0));
        assert!(cache.position_weights.iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let (params, att) = setup();
        let (y, _) = att.forward(&params, &Array4::zeros((1, 6, 3, 3)));
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn saturated_weights_double_the_input() {
        let (mut params, att) = setup();
        params.get_mut(att.channel.fc2_b).fill(1e3);
        params.get_mut(att.position.conv.bias).fill(1e3);
        for id in [att.channel.fc1_w, att.channel.fc2_w, att.position.conv.weight] {
            params.get_mut(id).fill(0.0);
        }
        let x = random((1, 6, 4, 4), 2);
        let (y, _) = att.forward(&params, &x);
        assert_eq!(y, &x * 2.0);
    }

    #[test]
    fn position_branch_mixes_sites() {
        let (params, att) = setup();
        let x = random((1, 6, 5, 5), 4);
        let (y0, _) = att.forward(&params, &x);
        let mut x2 = x.clone();
        x2[[0, 2, 2, 2]] += 0.5;
        let (y1, _) = att.forward(&params, &x2);
        let changed_elsewhere = (0..5)
            .flat_map(|r| (0..5).map(move |c| (r, c)))
            .filter(|&(r, c)| (r, c) != (2, 2))
            .any(|(r, c)| (0..6).any(|ch| y0[[0, ch, r, c]] != y1[[0, ch, r, c]]));
        assert!(changed_elsewhere);
    }
}
