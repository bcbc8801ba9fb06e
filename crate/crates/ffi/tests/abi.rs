use std::ffi::CStr;
use std::ptr;

use plap_ffi::*;

fn last_error() -> String {
    let p = plap_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn sample_1d(n: usize, seed: u64) -> *mut PlapCloud {
    let (lo, hi) = ([0.0], [1.0]);
    let pos = [0.0, 1.0];
    let val = [0.0, 1.0];
    let mut cloud = ptr::null_mut();
    let s = unsafe {
        plap_cloud_sample(
            1,
            lo.as_ptr(),
            hi.as_ptr(),
            pos.as_ptr(),
            val.as_ptr(),
            2,
            n,
            seed,
            &mut cloud,
        )
    };
    assert_eq!(s, PlapStatus::Ok);
    cloud
}

#[test]
fn sigma_eta_through_the_abi() {
    let mut v = 0.0;
    let s = unsafe { plap_sigma_eta(PlapKernel::Indicator, 1.0, 2.0, 2, &mut v) };
    assert_eq!(s, PlapStatus::Ok);
    assert!((v - std::f64::consts::FRAC_PI_4).abs() < 1e-12);
}

#[test]
fn sample_build_solve_round_trip() {
    let cloud = sample_1d(200, 7);
    assert_eq!(unsafe { plap_cloud_len(cloud) }, 200);
    assert_eq!(unsafe { plap_cloud_dim(cloud) }, 1);
    let mut coords = vec![0.0; 200];
    assert_eq!(
        unsafe { plap_cloud_coords(cloud, coords.as_mut_ptr(), 200) },
        PlapStatus::Ok
    );
    assert_eq!((coords[0], coords[1]), (0.0, 1.0));

    let mut conn = 0.0;
    assert_eq!(
        unsafe { plap_connectivity_radius(cloud, PlapKernel::Indicator, 1.0, &mut conn) },
        PlapStatus::Ok
    );
    let mut graph = ptr::null_mut();
    let s = unsafe { plap_graph_build(cloud, PlapKernel::Indicator, 1.0, 2.0 * conn, &mut graph) };
    assert_eq!(s, PlapStatus::Ok);
    // The graph owns its cloud reference.
    unsafe { plap_cloud_free(cloud) };
    assert!(unsafe { plap_graph_is_connected(graph) });
    assert!(unsafe { plap_graph_num_edges(graph) } > 0);

    let opts = plap_solve_options_default();
    let mut f = vec![0.0; 200];
    let mut rep = PlapSolveReport::default();
    let s = unsafe {
        plap_solve(
            graph,
            PlapModel::Constrained,
            2.0,
            2.0,
            1.0,
            2.0,
            &opts,
            f.as_mut_ptr(),
            200,
            &mut rep,
        )
    };
    assert_eq!(s, PlapStatus::Ok);
    assert!(rep.converged && rep.graph_connected);
    assert_eq!((f[0], f[1]), (0.0, 1.0));
    // Same answer as the Rust API on the same sample.
    let labeled = [
        plap::LabeledPoint::new(vec![0.0], 0.0),
        plap::LabeledPoint::new(vec![1.0], 1.0),
    ];
    let cloud = plap::sampling::sample_cloud(&plap::Domain::unit(1).unwrap(), &labeled, 200, 7).unwrap();
    let g = plap::graph::build_graph(
        std::sync::Arc::new(cloud),
        &plap::KernelProfile::indicator(1.0).unwrap(),
        2.0 * conn,
    )
    .unwrap();
    let want = plap::harness::solve_model(
        &g,
        plap::harness::Model::Constrained,
        2.0,
        &plap::SolveOptions::default(),
    )
    .unwrap();
    assert_eq!(f, want.solution.values());
    assert_eq!(rep.final_energy, want.final_energy);
    let mut e = 0.0;
    assert_eq!(
        unsafe { plap_dirichlet_energy(graph, f.as_ptr(), 200, 2.0, &mut e) },
        PlapStatus::Ok
    );
    assert!((e - rep.final_energy).abs() <= 1e-12 * e.max(1.0));
    unsafe { plap_graph_free(graph) };
}

#[test]
fn errors_carry_status_and_message() {
    let mut v = 0.0;
    let s = unsafe { plap_sigma_eta(PlapKernel::Indicator, -1.0, 2.0, 1, &mut v) };
    assert_eq!(s, PlapStatus::InvalidProfile);
    assert!(last_error().contains("support"));

    let s = unsafe { plap_sigma_eta(PlapKernel::Indicator, 1.0, 2.0, 1, ptr::null_mut()) };
    assert_eq!(s, PlapStatus::NullPointer);
    assert!(last_error().contains("out"));

    let cloud = sample_1d(20, 1);
    let mut small = [0.0; 3];
    assert_eq!(
        unsafe { plap_cloud_coords(cloud, small.as_mut_ptr(), 3) },
        PlapStatus::BufferTooSmall
    );
    let mut graph = ptr::null_mut();
    assert_eq!(
        unsafe { plap_graph_build(cloud, PlapKernel::Indicator, 1.0, -0.1, &mut graph) },
        PlapStatus::InvalidArgument
    );
    assert!(graph.is_null());
    assert_eq!(
        unsafe { plap_graph_build(cloud, PlapKernel::Indicator, 1.0, 0.5, &mut graph) },
        PlapStatus::Ok
    );
    let mut f = [0.0; 20];
    let s = unsafe {
        plap_solve(
            graph,
            PlapModel::Constrained,
            1.0,
            2.0,
            1.0,
            2.0,
            ptr::null(),
            f.as_mut_ptr(),
            20,
            ptr::null_mut(),
        )
    };
    assert_eq!(s, PlapStatus::Unsupported);
    unsafe {
        plap_graph_free(graph);
        plap_cloud_free(cloud);
        plap_cloud_free(ptr::null_mut());
    }
    assert_eq!(unsafe { plap_cloud_len(ptr::null()) }, 0);
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/plap.h")).unwrap();
    for name in [
        "plap_last_error_message",
        "plap_cloud_sample",
        "plap_graph_build",
        "plap_solve",
        "PLAP_STATUS_OK",
        "typedef struct PlapCloud PlapCloud",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }
}

#[test]
fn version_is_nul_terminated() {
    let v = unsafe { CStr::from_ptr(plap_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_compiles_as_c_and_cpp() {
    let include = concat!(env!("CARGO_MANIFEST_DIR"), "/include");
    let dir = tempfile_dir();
    let src = dir.join("use.c");
    std::fs::write(
        &src,
        "#include \"plap.h\"\nint main(void) { PlapSolveOptions o = plap_solve_options_default(); return (int)o.clip_to_labels; }\n",
    )
    .unwrap();
    for (compiler, lang) in [("cc", "c"), ("c++", "c++")] {
        let status = std::process::Command::new(compiler)
            .args(["-fsyntax-only", "-Wall", "-Werror", "-x", lang, "-I", include])
            .arg(&src)
            .status();
        match status {
            Ok(s) => assert!(s.success(), "{compiler} rejected the header"),
            Err(_) => eprintln!("{compiler} not found, skipping"),
        }
    }
}

fn tempfile_dir() -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!("plap-abi-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}
