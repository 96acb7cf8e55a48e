//! Scripted pilot for `visgov serve`. Pass the server address as the first
//! argument (default 127.0.0.1:7878).

use visgov::teleop::{ServerMessage, TeleopClient, TeleopMessage};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let addr = std::env::args().nth(1).unwrap_or_else(|| "127.0.0.1:7878".into());
    let mut client = TeleopClient::connect(&addr)?;
    let h = &client.hello;
    println!(
        "protocol {}, reduced FoV {:.2} x {:.2} deg, PoI {:?}, k* = {}",
        h.protocol, h.reduced_fov.alpha_h_deg, h.reduced_fov.alpha_v_deg, h.poi, h.k_star
    );
    let script = [
        TeleopMessage::SetReference { x: -3.0, y: 1.0, z: None, yaw: Some(0.0) },
        TeleopMessage::SetReference { x: -3.0, y: 1.0, z: None, yaw: Some(1.4) },
        TeleopMessage::SetReference { x: 1.0, y: 0.0, z: None, yaw: None },
    ];
    let mut frames = 0u64;
    while let Some(msg) = client.recv()? {
        match msg {
            ServerMessage::Frame(f) => {
                if frames % 200 == 0 {
                    if let Some(m) = script.get((frames / 200) as usize) {
                        client.send(m)?;
                    } else {
                        break;
                    }
                    println!(
                        "t = {:6.2}  p = ({:+.2}, {:+.2})  lambda = {:.3}  violation = {}",
                        f.t, f.x[0], f.x[1], f.lambda, f.violation
                    );
                }
                frames += 1;
            }
            ServerMessage::Error { message } => println!("server: {message}"),
            ServerMessage::Bye(stats) => println!("bye: {stats:?}"),
            ServerMessage::Hello(_) => {}
        }
    }
    client.close();
    Ok(())
}
