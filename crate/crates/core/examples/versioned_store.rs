//! The versioned datastore: strictly sequential versions, compare-and-set
//! conflicts, and blocking waits for a future version.

use std::sync::Arc;
use std::thread;
use std::time::Duration;

use vgrid::error::Error;
use vgrid::store::DataStore;

fn main() -> vgrid::error::Result<()> {
    let store = Arc::new(DataStore::new());
    store.put_versioned("model", 0, b"v0".to_vec())?;

    let waiter = {
        let store = store.clone();
        thread::spawn(move || store.wait_for_version("model", 2, Duration::from_secs(5)))
    };

    store.put_versioned("model", 1, b"v1".to_vec())?;
    // Two writers race for version 2; only the first wins.
    store.put_versioned("model", 2, b"v2 from A".to_vec())?;
    match store.put_versioned("model", 2, b"v2 from B".to_vec()) {
        Err(Error::VersionConflict { current, .. }) => println!("B lost the race, current is {current:?}"),
        other => println!("unexpected: {other:?}"),
    }

    let rec = waiter.join().unwrap()?;
    println!("waiter woke at v{}: {}", rec.version, String::from_utf8_lossy(&rec.payload));

    match store.wait_for_version("model", 9, Duration::from_millis(50)) {
        Err(Error::Timeout) => println!("v9 never arrived"),
        other => println!("unexpected: {other:?}"),
    }

    store.put_plain("notes", b"plain keys just overwrite".to_vec());
    println!("{}", String::from_utf8_lossy(&store.get_plain("notes")?));
    Ok(())
}
