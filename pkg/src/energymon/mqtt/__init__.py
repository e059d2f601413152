"""Self-contained MQTT 3.1.1 subset: codec, broker, and client.

Supported control packets: CONNECT/CONNACK, PUBLISH (QoS 0/1), PUBACK,
SUBSCRIBE/SUBACK, PINGREQ/PINGRESP, DISCONNECT. Clean sessions only; no
QoS 2, retained messages, wills, or authentication.
"""

from .packets import (
    Connack,
    Connect,
    Disconnect,
    FrameDecoder,
    MqttPacket,
    Pingreq,
    Pingresp,
    ProtocolError,
    Puback,
    Publish,
    Suback,
    Subscribe,
    TopicFilter,
    UnsupportedFeatureError,
    decode_packet,
    decode_remaining_length,
    encode_packet,
    encode_remaining_length,
    topic_matches,
)
from .broker import BrokerCore, LocalClient, MqttBroker
from .client import MqttClient, MqttClientError

__all__ = [
    "BrokerCore",
    "Connack",
    "Connect",
    "Disconnect",
    "FrameDecoder",
    "LocalClient",
    "MqttBroker",
    "MqttClient",
    "MqttClientError",
    "MqttPacket",
    "Pingreq",
    "Pingresp",
    "ProtocolError",
    "Puback",
    "Publish",
    "Suback",
    "Subscribe",
    "TopicFilter",
    "UnsupportedFeatureError",
    "decode_packet",
    "decode_remaining_length",
    "encode_packet",
    "encode_remaining_length",
    "topic_matches",
]
