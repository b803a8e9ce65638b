//! Finite-difference gradient checks, one test per case.

mod common;

use common::gradcheck;

#[test]
fn conv2d() {
    gradcheck::conv2d_gradients().assert();
}

#[test]
fn batchnorm() {
    gradcheck::batchnorm_gradients().assert();
}

#[test]
fn relu() {
    gradcheck::relu_gradients().assert();
}

#[test]
fn maxpool() {
    gradcheck::maxpool_gradients().assert();
}

#[test]
fn avgpool() {
    gradcheck::avgpool_gradients().assert();
}

#[test]
fn global_avgpool() {
    gradcheck::global_avgpool_gradients().assert();
}

#[test]
fn linear() {
    gradcheck::linear_gradients().assert();
}

#[test]
fn cross_entropy() {
    gradcheck::cross_entropy_gradients().assert();
}

#[test]
fn tiny_densenet() {
    gradcheck::tiny_densenet_gradients().assert();
}

#[test]
fn standard_stem_composition() {
    gradcheck::standard_stem_composition().assert();
}
