use tiersplat::splat2d::*;

mod common;

#[test]
fn ssim_and_psnr_match_reference_values() {
    for f in common::metric_fixtures() {
        let s = ssim(&f.a, &f.b).unwrap();
        let p = psnr(&f.a, &f.b).unwrap();
        assert!(
            (s - f.ssim).abs() < 1e-9,
            "{}: ssim {s} vs {}",
            f.name,
            f.ssim
        );
        assert!(
            (p - f.psnr).abs() < 1e-9,
            "{}: psnr {p} vs {}",
            f.name,
            f.psnr
        );
    }
}

#[test]
fn pure_dssim_loss_on_fixtures() {
    for f in common::metric_fixtures() {
        let l = loss(&f.a, &f.b, 1.0).unwrap();
        assert!((l - (1.0 - f.ssim) / 2.0).abs() < 1e-9, "{}", f.name);
    }
}

#[test]
fn ssim_is_symmetric() {
    for f in common::metric_fixtures() {
        let ab = ssim(&f.a, &f.b).unwrap();
        let ba = ssim(&f.b, &f.a).unwrap();
        assert!((ab - ba).abs() < 1e-14);
    }
}
