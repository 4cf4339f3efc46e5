use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::event::{Event, Polarity, SensorGeometry};

fn random_sample(rng: &mut ChaCha8Rng, n: usize, w: u16, h: u16, t_span: u64) -> EventSample {
    let events = (0..n)
        .map(|_| {
            let p = if rng.random_bool(0.5) { Polarity::Positive } else { Polarity::Negative };
            Event::new(rng.random_range(0..w), rng.random_range(0..h), rng.random_range(0..t_span), p)
        })
        .collect();
    EventSample::new(events, SensorGeometry::new(w, h).unwrap(), None, "r").unwrap()
}

fn scalar_bin(t: u64, t_min: u64, t_max: u64, m_hat: usize) -> u32 {
    if t_max == t_min {
        return 1;
    }
    let x = m_hat as f64 * (t - t_min) as f64 / (t_max - t_min) as f64;
    // exact rationals are representable only approximately, so compare the
    // float ceil against the neighbouring integer when it sits on a boundary
    let c = x.ceil();
    let c = if (x - x.round()).abs() < 1e-9 { x.round() } else { c };
    c.max(1.0) as u32
}

fn brute_accumulative(q: &QuantizedEvents) -> Vec<f32> {
    let (w, h) = (q.geometry.width as usize, q.geometry.height as usize);
    let mut out = vec![0.0f32; q.m_hat * h * w];
    for m in 1..=q.m_hat {
        for y in 0..h {
            for x in 0..w {
                let mut s = 0.0;
                for e in &q.events {
                    if e.x as usize == x && e.y as usize == y && e.bin as usize <= m {
                        s += e.polarity as f32;
                    }
                }
                out[((m - 1) * h + y) * w + x] = s;
            }
        }
    }
    out
}

/// Direct 3-D convolution with temporal extent and stride `G`, written
/// against a frame-major `frames x C x H x W` input.
fn conv3d_oracle(input: &FrameStack, s: &ConvStage) -> Vec<f32> {
    let (g, ci, co, k) = (s.group_size, s.in_channels, s.out_channels, s.kernel);
    let (h, w) = (input.height, input.width);
    let pad = (k / 2) as isize;
    let out_frames = input.frames / g;
    let mut out = vec![0.0f32; out_frames * co * h * w];
    for f in 0..out_frames {
        for o in 0..co {
            for y in 0..h {
                for x in 0..w {
                    let mut acc = s.bias[o] as f64;
                    for dt in 0..g {
                        for c in 0..ci {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = y as isize + ky as isize - pad;
                                    let ix = x as isize + kx as isize - pad;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                        continue;
                                    }
                                    let frame = f * g + dt;
                                    let v = input.data[((frame * ci + c) * h + iy as usize) * w + ix as usize];
                                    // weight[o][c][dt][ky][kx] laid out as conv2d channel dt*ci + c
                                    let wt = s.weights[((o * g * ci + dt * ci + c) * k + ky) * k + kx];
                                    acc += v as f64 * wt as f64;
                                }
                            }
                        }
                    }
                    let v = acc as f32;
                    out[((f * co + o) * h + y) * w + x] = if v >= 0.0 { v } else { v * s.slope };
                }
            }
        }
    }
    out
}

fn random_stack(rng: &mut ChaCha8Rng, frames: usize, channels: usize, h: usize, w: usize) -> FrameStack {
    FrameStack {
        frames,
        channels,
        height: h,
        width: w,
        data: (0..frames * channels * h * w).map(|_| rng.random_range(-2.0..2.0)).collect(),
    }
}

#[test]
fn scalar_oracle_matches_quantization() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for m_hat in [1, 4, 10, 100, 7] {
        let s = random_sample(&mut rng, 500, 8, 8, 10_000);
        let (lo, hi) = s.time_range().unwrap();
        let q = quantize_timestamps(&s, m_hat).unwrap();
        for (e, qe) in s.events().iter().zip(&q.events) {
            assert_eq!(qe.bin, scalar_bin(e.t, lo, hi, m_hat), "t={} m_hat={m_hat}", e.t);
            assert!(qe.bin >= 1 && qe.bin as usize <= m_hat);
        }
        assert!(q.events.windows(2).all(|p| p[0].bin <= p[1].bin));
    }
}

#[test]
fn accumulative_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for n in [1, 50, 1000] {
        let s = random_sample(&mut rng, n, 8, 8, 5_000);
        let q = quantize_timestamps(&s, 10).unwrap();
        assert_eq!(voxelize_accumulative(&q).data, brute_accumulative(&q));
    }
}

#[test]
fn prefix_sum_of_spike_is_accumulative() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let s = random_sample(&mut rng, 400, 6, 5, 3_000);
    let q = quantize_timestamps(&s, 12).unwrap();
    let spike = voxelize_spike(&q);
    let acc = voxelize_accumulative(&q);
    let p = q.geometry.pixels();
    let mut running = vec![0.0f32; p];
    for m in 1..=12 {
        running.iter_mut().zip(spike.frame(m)).for_each(|(r, v)| *r += v);
        assert_eq!(&running[..], acc.frame(m));
    }
}

#[test]
fn aligned_compress_matches_conv3d() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for (g, ci, co, k, frames, h, w) in [(2, 1, 4, 5, 8, 7, 6), (5, 4, 3, 5, 10, 5, 5), (3, 2, 2, 3, 6, 4, 9), (1, 1, 1, 1, 3, 2, 2)] {
        let stage = ConvStage::init(g, ci, co, k, &mut rng).unwrap();
        let input = random_stack(&mut rng, frames, ci, h, w);
        let got = aligned_compress(&input, &stage).unwrap();
        assert_eq!(got.dims(), [frames / g, co, h, w]);
        let want = conv3d_oracle(&input, &stage);
        for (a, b) in got.data.iter().zip(&want) {
            assert!((a - b).abs() <= 1e-4 * (1.0 + b.abs()), "{a} vs {b}");
        }
    }
}

#[test]
fn identity_kernel_selects_first_frame_of_group() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut stage = ConvStage::init(2, 1, 1, 3, &mut rng).unwrap();
    stage.weights.iter_mut().for_each(|v| *v = 0.0);
    stage.weights[4] = 1.0; // channel 0, centre tap
    stage.bias[0] = 0.0;
    stage.slope = 1.0;
    let input = random_stack(&mut rng, 6, 1, 4, 5);
    let out = aligned_compress(&input, &stage).unwrap();
    for g in 0..3 {
        assert_eq!(out.frame(g), input.frame(2 * g));
    }
}

#[test]
fn zero_input_gives_activated_bias() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut stage = ConvStage::init(2, 1, 3, 5, &mut rng).unwrap();
    stage.bias = vec![0.5, -0.5, 0.0];
    let input = FrameStack {
        frames: 4,
        channels: 1,
        height: 3,
        width: 3,
        data: vec![0.0; 36],
    };
    let out = aligned_compress(&input, &stage).unwrap();
    for f in 0..2 {
        let frame = out.frame(f);
        assert!(frame[..9].iter().all(|&v| v == 0.5));
        assert!(frame[9..18].iter().all(|&v| (v + 0.005).abs() < 1e-7));
        assert!(frame[18..].iter().all(|&v| v == 0.0));
    }
}

#[test]
fn aligned_compress_rejects_bad_shapes() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let stage = ConvStage::init(2, 1, 2, 3, &mut rng).unwrap();
    assert!(matches!(aligned_compress(&random_stack(&mut rng, 5, 1, 3, 3), &stage), Err(Error::Shape(_))));
    assert!(aligned_compress(&random_stack(&mut rng, 4, 2, 3, 3), &stage).is_err());
    let mut even = stage.clone();
    even.kernel = 2;
    assert!(even.validate().is_err());
}

#[test]
fn avg_compress_examples() {
    let f = vec![1.0, -3.0, 0.5, 2.0];
    let same = FrameStack {
        frames: 2,
        channels: 1,
        height: 2,
        width: 2,
        data: [f.clone(), f.clone()].concat(),
    };
    assert_eq!(avg_compress(&same, 2).unwrap().data, f);
    let ramp = FrameStack {
        data: [vec![0.0; 4], vec![2.0; 4]].concat(),
        ..same.clone()
    };
    assert_eq!(avg_compress(&ramp, 2).unwrap().data, vec![1.0; 4]);
    assert!(avg_compress(&same, 3).is_err());
    assert!(avg_compress(&same, 0).is_err());
}

#[test]
fn avg_compress_matches_brute_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let input = random_stack(&mut rng, 12, 2, 3, 4);
    let out = avg_compress(&input, 3).unwrap();
    let fl = input.frame_len();
    for f in 0..4 {
        for i in 0..fl {
            let mean = (0..3).map(|d| input.data[(f * 3 + d) * fl + i]).sum::<f32>() / 3.0;
            assert!((out.data[f * fl + i] - mean).abs() < 1e-6);
        }
    }
}

#[test]
fn standard_config_shape() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let cfg = EncoderConfig::standard(&mut rng);
    let s = random_sample(&mut rng, 300, 12, 9, 100_000);
    let t = encode(&s, &cfg).unwrap();
    assert_eq!(t.dims(), [3, 10, 9, 12]);
    let q = encode(&s, &cfg.with_mode(EncoderMode::QuantizeOnly)).unwrap();
    assert_eq!(q.dims(), [1, 10, 9, 12]);
    let a = encode(&s, &cfg.with_mode(EncoderMode::AvgCompress)).unwrap();
    assert_eq!(a.dims(), [1, 10, 9, 12]);
    assert_eq!(encode(&s, &cfg.with_mode(EncoderMode::Spike)).unwrap().dims(), [3, 10, 9, 12]);
}

#[test]
fn spike_accum_stacks_two_channels() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let cfg = EncoderConfig::build(20, EncoderMode::SpikeAccum, &[2, 5], &[4, 3], 3, &mut rng).unwrap();
    assert_eq!(cfg.stages[0].in_channels, 2);
    let s = random_sample(&mut rng, 200, 6, 6, 1_000);
    let frames = prepare_frames(&s, &cfg).unwrap();
    let q = quantize_timestamps(&s, 20).unwrap();
    let (acc, spike) = (voxelize_accumulative(&q), voxelize_spike(&q));
    for m in 0..20 {
        assert_eq!(&frames.frame(m)[..36], acc.frame(m + 1));
        assert_eq!(&frames.frame(m)[36..], spike.frame(m + 1));
    }
    assert_eq!(encode(&s, &cfg).unwrap().dims(), [3, 2, 6, 6]);
    // an aet-built stage list cannot run spike-accum input
    let aet = EncoderConfig::build(20, EncoderMode::Aet, &[2, 5], &[4, 3], 3, &mut rng).unwrap();
    assert!(aet.with_mode(EncoderMode::SpikeAccum).validate().is_err());
}

#[test]
fn config_invariants() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(EncoderConfig::build(100, EncoderMode::Aet, &[3], &[2], 3, &mut rng).is_err());
    assert!(EncoderConfig::build(0, EncoderMode::Aet, &[], &[], 3, &mut rng).is_err());
    assert!(EncoderConfig::build(8, EncoderMode::Aet, &[2], &[2, 3], 3, &mut rng).is_err());
    let cfg = EncoderConfig::build(8, EncoderMode::Aet, &[], &[], 3, &mut rng).unwrap();
    assert_eq!((cfg.num_frames(), cfg.out_channels()), (8, 1));
    for mode in EncoderMode::ALL {
        assert_eq!(mode.to_string().parse::<EncoderMode>().unwrap(), mode);
    }
    assert!("voxel".parse::<EncoderMode>().is_err());
}

#[test]
fn aet_tensor_layout_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let stack = random_stack(&mut rng, 4, 3, 2, 5);
    let t = AETensor::from_frames(&stack);
    assert_eq!(t.dims(), [3, 4, 2, 5]);
    // channel 2 of frame 1 sits at block (2, 1)
    assert_eq!(&t.data[(2 * 4 + 1) * 10..(2 * 4 + 2) * 10], &stack.frame(1)[20..30]);
    assert_eq!(t.to_frames(), stack);
}

#[test]
fn batch_is_order_preserving_and_worker_independent() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let cfg = EncoderConfig::build(20, EncoderMode::Aet, &[2, 5], &[4, 3], 3, &mut rng).unwrap();
    let samples: Vec<_> = (0..6).map(|_| random_sample(&mut rng, 100, 8, 8, 2_000)).collect();
    let one = encode_batch(&samples, &cfg, 1).unwrap();
    let four = encode_batch(&samples, &cfg, 4).unwrap();
    assert_eq!(one, four);
    for (s, t) in samples.iter().zip(&one) {
        assert_eq!(&encode(s, &cfg).unwrap(), t);
    }
}

#[test]
fn time_shift_invariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let cfg = EncoderConfig::build(10, EncoderMode::Aet, &[2], &[2], 3, &mut rng).unwrap();
    let s = random_sample(&mut rng, 150, 5, 5, 9_000);
    let shifted: Vec<Event> = s.events().iter().map(|e| Event::new(e.x, e.y, e.t + 123_456, e.p)).collect();
    let s2 = EventSample::new(shifted, s.geometry(), None, "s").unwrap();
    assert_eq!(encode(&s, &cfg).unwrap(), encode(&s2, &cfg).unwrap());
}

proptest! {
    #[test]
    fn bins_stay_in_range(ts in proptest::collection::vec(0u64..u64::MAX / 2, 1..50), m_hat in 1usize..500) {
        let events = ts.iter().map(|&t| Event::new(0, 0, t, Polarity::Positive)).collect();
        let s = EventSample::new(events, SensorGeometry::new(1, 1).unwrap(), None, "p").unwrap();
        let q = quantize_timestamps(&s, m_hat).unwrap();
        prop_assert!(q.events.iter().all(|e| e.bin >= 1 && e.bin as usize <= m_hat));
        prop_assert!(q.events.windows(2).all(|p| p[0].bin <= p[1].bin));
        let last = q.events.last().unwrap().bin as usize;
        prop_assert!(last == m_hat || s.time_range().map(|(a, b)| a == b).unwrap());
    }
}
