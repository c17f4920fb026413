//! Runs the cheaper cargo examples so they cannot rot.

mod synth_dataset {
    include!("../examples/synth_dataset.rs");
}

mod train_fbl {
    include!("../examples/train_fbl.rs");
}

mod gradient_check {
    include!("../examples/gradient_check.rs");
}

mod loss_zoo {
    include!("../examples/loss_zoo.rs");
}

#[test]
fn synth_dataset_example() {
    synth_dataset::main().unwrap();
}

#[test]
fn train_fbl_example() {
    train_fbl::main().unwrap();
}

#[test]
fn gradient_check_example() {
    gradient_check::main().unwrap();
}

#[test]
fn loss_zoo_example() {
    loss_zoo::main().unwrap();
}
