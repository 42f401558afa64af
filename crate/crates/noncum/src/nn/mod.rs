//! Minimal from-scratch neural toolkit: a dueling multilayer perceptron
//! with hand-written backprop and Adam, replay buffers, and the deep
//! Q-learning loops built on them. Everything is `f64`, single-threaded, and
//! deterministic per seed; gradient correctness is pinned by finite
//! differences in the tests.

pub mod dqn;
pub mod mlp;
pub mod replay;
