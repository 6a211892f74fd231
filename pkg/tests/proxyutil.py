"""Byte-level TCP recording proxy used to capture real wire traffic."""

import socket
import threading


class RecordingProxy:
    """Forwards client connections to a target, recording each connection's
    byte stream in both directions."""

    def __init__(self, target: tuple[str, int]):
        self.target = target
        self.connections: list[dict] = []  # {"to_server": bytearray, "to_client": bytearray}
        self._lock = threading.Lock()
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._sock.bind(("127.0.0.1", 0))
        self._sock.listen(32)
        threading.Thread(target=self._accept_loop, daemon=True).start()

    @property
    def address(self) -> tuple[str, int]:
        host, port = self._sock.getsockname()[:2]
        return host, port

    def _accept_loop(self):
        while True:
            try:
                downstream, _ = self._sock.accept()
            except OSError:
                return
            upstream = socket.create_connection(self.target)
            record = {"to_server": bytearray(), "to_client": bytearray()}
            with self._lock:
                self.connections.append(record)
            threading.Thread(
                target=self._pump, args=(downstream, upstream, record["to_server"]), daemon=True
            ).start()
            threading.Thread(
                target=self._pump, args=(upstream, downstream, record["to_client"]), daemon=True
            ).start()

    def _pump(self, src: socket.socket, dst: socket.socket, sink: bytearray):
        try:
            while True:
                chunk = src.recv(65536)
                if not chunk:
                    break
                with self._lock:
                    sink.extend(chunk)
                dst.sendall(chunk)
        except OSError:
            pass
        finally:
            for s in (src, dst):
                try:
                    s.shutdown(socket.SHUT_RDWR)
                except OSError:
                    pass

    def captured_streams(self) -> list[tuple[bytes, bytes]]:
        with self._lock:
            return [(bytes(r["to_server"]), bytes(r["to_client"])) for r in self.connections]

    def close(self):
        self._sock.close()
