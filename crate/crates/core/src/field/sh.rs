use crate::real::Real;

use super::config::SH_FEATURES;

/// Real spherical-harmonics basis through band 3 for a unit direction.
pub fn sh_encode<T: Real>(d: [T; 3], out: &mut [T; SH_FEATURES]) {
    let c = T::lit;
    let [x, y, z] = d;
    let (xx, yy, zz) = (x * x, y * y, z * z);
    let (xy, yz, xz) = (x * y, y * z, x * z);

    out[0] = c(0.282_094_791_773_878_14);
    out[1] = c(-0.488_602_511_902_919_87) * y;
    out[2] = c(0.488_602_511_902_919_87) * z;
    out[3] = c(-0.488_602_511_902_919_87) * x;
    out[4] = c(1.092_548_430_592_079_2) * xy;
    out[5] = c(-1.092_548_430_592_079_2) * yz;
    out[6] = c(0.946_174_695_757_559_97) * zz - c(0.315_391_565_252_519_99);
    out[7] = c(-1.092_548_430_592_079_2) * xz;
    out[8] = c(0.546_274_215_296_039_59) * (xx - yy);
    out[9] = c(0.590_043_589_926_643_52) * y * (c(-3.0) * xx + yy);
    out[10] = c(2.890_611_442_640_553_8) * xy * z;
    out[11] = c(0.457_045_799_464_465_72) * y * (c(1.0) - c(5.0) * zz);
    out[12] = c(0.373_176_332_590_115_4) * z * (c(5.0) * zz - c(3.0));
    out[13] = c(0.457_045_799_464_465_72) * x * (c(1.0) - c(5.0) * zz);
    out[14] = c(1.445_305_721_320_276_9) * z * (xx - yy);
    out[15] = c(0.590_043_589_926_643_52) * x * (-xx + c(3.0) * yy);
}
