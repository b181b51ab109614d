//! An external trainer driving the scheduler over TCP.
//!
//! The trainer fits a 2-parameter least-squares target with the help of three
//! auxiliary objectives and only ever sends losses and gradient summaries.

use std::io::BufReader;
use std::net::{TcpListener, TcpStream};
use std::thread;

use asap::protocol::{serve, Client, ServeOptions, SessionDefaults};
use asap::reward::summarize_gradients;

type Objective = fn(&[f64; 2]) -> (f64, [f64; 2]);

fn least_squares(theta: &[f64; 2], xs: &[(f64, f64)]) -> (f64, [f64; 2]) {
    let mut loss = 0.0;
    let mut grad = [0.0; 2];
    for &(x, y) in xs {
        let r = theta[0] * x + theta[1] - y;
        loss += 0.5 * r * r / xs.len() as f64;
        grad[0] += r * x / xs.len() as f64;
        grad[1] += r / xs.len() as f64;
    }
    (loss, grad)
}

fn target(t: &[f64; 2]) -> (f64, [f64; 2]) {
    least_squares(t, &[(0.0, 1.0), (1.0, 3.1), (2.0, 4.9)])
}

fn related(t: &[f64; 2]) -> (f64, [f64; 2]) {
    least_squares(t, &[(0.0, 1.2), (1.0, 2.9), (2.0, 5.2)])
}

fn unrelated(t: &[f64; 2]) -> (f64, [f64; 2]) {
    least_squares(t, &[(0.0, 3.0), (1.0, -1.0), (2.0, 1.0)])
}

fn shrink(t: &[f64; 2]) -> (f64, [f64; 2]) {
    (0.5 * (t[0] * t[0] + t[1] * t[1]), [t[0], t[1]])
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let listener = TcpListener::bind("127.0.0.1:0")?;
    let addr = listener.local_addr()?;
    let server = thread::spawn(move || {
        let (stream, _) = listener.accept().expect("accept");
        let reader = BufReader::new(stream.try_clone().expect("clone"));
        serve(reader, stream, SessionDefaults::default(), &ServeOptions::default()).map(|(outcome, _)| outcome)
    });

    let aux: [Objective; 3] = [related, unrelated, shrink];
    let horizon = 100;
    let stream = TcpStream::connect(addr)?;
    let mut client = Client::connect(BufReader::new(stream.try_clone()?), stream, aux.len(), horizon, None, None)?;

    let mut theta = [0.0, 0.0];
    let (_, gt) = target(&theta);
    for (arm, f) in aux.iter().enumerate() {
        let (loss, ga) = f(&theta);
        client.probe(arm, loss, summarize_gradients(&ga, &gt)?)?;
    }
    let mut counts = [0u32; 3];
    for _ in 0..horizon {
        let arm = client.select()?;
        let (_, gt) = target(&theta);
        let (loss, ga) = aux[arm](&theta);
        theta = [theta[0] - 0.05 * (gt[0] + ga[0]), theta[1] - 0.05 * (gt[1] + ga[1])];
        client.report(loss, summarize_gradients(&ga, &gt)?, None)?;
        counts[arm] += 1;
    }
    client.shutdown()?;
    println!("server: {:?}", server.join().expect("server thread")?);
    println!("selection counts: {counts:?}");
    println!("final target loss: {:.4}", target(&theta).0);
    Ok(())
}
