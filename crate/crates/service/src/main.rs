use convlens_service::{router, ServiceConfig, Store};

#[tokio::main]
async fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let config = match ServiceConfig::from_env() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("convlens-serve: {e}");
            std::process::exit(1);
        }
    };
    let addr = config.addr.clone();
    let store = match Store::open(config) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("convlens-serve: {e}");
            std::process::exit(1);
        }
    };
    let listener = match tokio::net::TcpListener::bind(&addr).await {
        Ok(l) => l,
        Err(e) => {
            eprintln!("convlens-serve: cannot listen on {addr}: {e}");
            std::process::exit(1);
        }
    };
    log::info!("listening on {addr}");
    let shutdown = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    if let Err(e) = axum::serve(listener, router(store)).with_graceful_shutdown(shutdown).await {
        eprintln!("convlens-serve: {e}");
        std::process::exit(1);
    }
}
