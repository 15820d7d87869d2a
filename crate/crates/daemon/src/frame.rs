//! Async framing over any byte stream.

use lluad_core::protocol::{frame_len, Message, ProtocolError, FRAME_HEADER_LEN};
use thiserror::Error;
use tokio::io::{AsyncRead, AsyncReadExt, AsyncWrite, AsyncWriteExt};

#[derive(Debug, Error)]
pub enum FrameError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}

/// Reads one frame; `None` on a clean end of stream between frames.
pub async fn read_message<R: AsyncRead + Unpin>(r: &mut R) -> Result<Option<Message>, FrameError> {
    let mut header = [0u8; FRAME_HEADER_LEN];
    match r.read_exact(&mut header).await {
        Ok(_) => {}
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    let len = frame_len(header)?;
    let mut frame = vec![0u8; len];
    r.read_exact(&mut frame).await?;
    Ok(Some(Message::decode(&frame)?))
}

pub async fn write_message<W: AsyncWrite + Unpin>(w: &mut W, message: &Message) -> std::io::Result<()> {
    w.write_all(&message.encode()).await
}
