"""Synthetic device bundles for demos and tests.

``wemo``      a Belkin-style smart switch: 12 services, vendor root namespace,
              vendor extension elements, an icon and a presentation page.
``lab``       a lab device with get/set pairs for every UPnP data type,
              constrained variables and generic A_ARG_TYPE_ arguments.
``mediahub``  an AV device from another vendor namespace with an embedded
              device, mixed actions and a service id shared by two devices.
"""

from .bundle import assemble, snapshot_key
from .description import (
    ActionDef,
    AllowedRange,
    Argument,
    DeviceDescription,
    Icon,
    ServiceDescription,
    ServiceRef,
    StateVariableDef as V,
    serialize_device_description,
    serialize_service_description,
)


def _scpd(actions, variables):
    service = ServiceDescription(
        actions=[ActionDef(name, [Argument(*a) for a in args]) for name, args in actions],
        state_variables=variables,
    )
    return serialize_service_description(service, verbatim=False)


def get(var, action=None, arg=None):
    return (action or f"Get{var}", [(arg or var, "out", var)])


def put(var, action=None, arg=None):
    return (action or f"Set{var}", [(arg or var, "in", var)])


# --- WeMo-style switch -----------------------------------------------------

WEMO_UUID = "uuid:Socket-1_0-221517K0101769"
WEMO_SERVER = "Unspecified, UPnP/1.0, Unspecified"

WEMO_SERVICES = [
    # (short name, scpd path, actions, variables)
    ("WiFiSetup", "/setupservice.xml",
     [get("ApList"), get("NetworkStatus"),
      ("ConnectHomeNetwork", [("ssid", "in", "ssid"), ("auth", "in", "auth"),
                              ("password", "in", "password"), ("channel", "in", "channel")]),
      ("CloseSetup", [])],
     [V("ApList", "string", send_events=False), V("NetworkStatus", "ui1", "0"),
      V("ssid", "string", send_events=False), V("auth", "string", send_events=False),
      V("password", "string", send_events=False),
      V("channel", "ui1", allowed_range=AllowedRange("1", "14", "1"), send_events=False)]),
    ("timesync", "/timesyncservice.xml",
     [("TimeSync", [("UTC", "in", "UTC"), ("TimeZone", "in", "TimeZone"), ("dst", "in", "dst")]),
      get("UTC", "GetTime")],
     [V("UTC", "ui4", "0", send_events=False), V("TimeZone", "string", "0", send_events=False),
      V("dst", "boolean", "0", send_events=False)]),
    ("basicevent", "/eventservice.xml",
     [get("BinaryState"), put("BinaryState"), get("FriendlyName"),
      put("FriendlyName", "ChangeFriendlyName"), get("SignalStrength"), get("MacAddr"),
      get("SerialNo"), get("PluginUDN"), get("HomeId"), put("HomeId"),
      get("URL", "GetIconURL")],
     [V("BinaryState", "boolean", "0"), V("FriendlyName", "string"),
      V("SignalStrength", "ui1", allowed_range=AllowedRange("0", "100")),
      V("MacAddr", "string", send_events=False), V("SerialNo", "string", send_events=False),
      V("PluginUDN", "string", send_events=False), V("HomeId", "string", send_events=False),
      V("URL", "uri", send_events=False)]),
    ("firmwareupdate", "/firmwareupdate.xml",
     [get("FirmwareVersion"),
      ("UpdateFirmware", [("NewFirmwareVersion", "in", "NewFirmwareVersion"),
                          ("URL", "in", "URL")])],
     [V("FirmwareVersion", "string"), V("NewFirmwareVersion", "string", send_events=False),
      V("URL", "uri", send_events=False)]),
    ("rules", "/rulesservice.xml",
     [get("RulesDBVersion"), put("RulesDBVersion"), get("RulesDBPath"),
      ("EditWeeklycalendar", [("action", "in", "action")])],
     [V("RulesDBVersion", "i4", "0"), V("RulesDBPath", "uri", send_events=False),
      V("action", "string", allowed_values=["Remove", "Enable", "Disable"], send_events=False)]),
    ("metainfo", "/metainfoservice.xml",
     [get("MetaInfo"), get("ExtMetaInfo")],
     [V("MetaInfo", "string", send_events=False), V("ExtMetaInfo", "string", send_events=False)]),
    ("remoteaccess", "/remoteaccess.xml",
     [("RemoteAccess", [("DeviceId", "in", "DeviceId"), ("HomeId", "in", "HomeId"),
                        ("DeviceName", "in", "DeviceName"), ("smartUniqueId", "out", "smartUniqueId"),
                        ("statusCode", "out", "statusCode")])],
     [V("DeviceId", "string", send_events=False), V("HomeId", "string", send_events=False),
      V("DeviceName", "string", send_events=False),
      V("smartUniqueId", "string", send_events=False), V("statusCode", "string", "S", send_events=False)]),
    ("deviceinfo", "/deviceinfoservice.xml",
     [get("DeviceInformation", "GetDeviceInformation"), get("InformationTimeStamp", "GetInformation")],
     [V("DeviceInformation", "string", send_events=False),
      V("InformationTimeStamp", "dateTime", send_events=False)]),
    ("smartsetup", "/smartsetup.xml",
     [("PairAndRegister", [("PairingData", "in", "PairingData"),
                           ("RegistrationData", "in", "RegistrationData"),
                           ("PairingStatus", "out", "PairingStatus")]),
      get("RegistrationStatus")],
     [V("PairingData", "string", send_events=False), V("RegistrationData", "string", send_events=False),
      V("PairingStatus", "string", "Unpaired", send_events=False),
      V("RegistrationStatus", "string", send_events=False)]),
    ("manufacture", "/manufacture.xml",
     [get("ManufactureData", "GetManufactureData")],
     [V("ManufactureData", "string", send_events=False)]),
    ("deviceevent", "/deviceevent.xml",
     [get("attributeList", "GetAttributes"), put("attributeList", "SetAttributes")],
     [V("attributeList", "string")]),
    ("insight", "/insightservice.xml",
     [get("InsightParams"), get("TodayKWH"), get("PowerThreshold"), put("PowerThreshold")],
     [V("InsightParams", "string"), V("TodayKWH", "r8", send_events=False),
      V("PowerThreshold", "ui4", "8000", send_events=False)]),
]

WEMO_STATE = {
    "basicevent": {
        "BinaryState": "0",
        "FriendlyName": "Living Room Lamp",
        "SignalStrength": "82",
        "MacAddr": "94103E4B1F2C",
        "SerialNo": "221517K0101769",
        "PluginUDN": WEMO_UUID,
        "HomeId": "7463829",
        "URL": "http://10.0.0.11:49153/icon.jpg",
    },
    "WiFiSetup": {"ApList": "Home-5G|1|100|WPA2PSK/AES,", "NetworkStatus": "1"},
    "timesync": {"UTC": "1569312000"},
    "firmwareupdate": {"FirmwareVersion": "WeMo_WW_2.00.11408.PVT-OWRT-SNS"},
    "rules": {"RulesDBVersion": "12", "RulesDBPath": "http://10.0.0.11:49153/rules.db"},
    "metainfo": {"MetaInfo": "94103E4B1F2C|221517K0101769|Plugin Device|WeMo_WW_2.00.11408|WeMo.Switch|Socket",
                 "ExtMetaInfo": "1|0|1|0|1111:11:12|4|1569312000|0|0"},
    "deviceinfo": {"DeviceInformation": "94103E4B1F2C|221517K0101769|Socket|WeMo_WW_2.00.11408|Living Room Lamp|Socket",
                   "InformationTimeStamp": "2019-09-24T08:00:00"},
    "smartsetup": {"RegistrationStatus": "Registered"},
    "manufacture": {"ManufactureData": "<SkuNo>Plugin Device</SkuNo>"},
    "deviceevent": {"attributeList": "<attribute><name>Switch</name><value>0</value></attribute>"},
    "insight": {"InsightParams": "0|1569312000|0|0|0|0|0|0|0|0|8000", "TodayKWH": "0.25",
                "PowerThreshold": "8000"},
}

WEMO_ICON = bytes.fromhex(
    "ffd8ffe000104a46494600010100000100010000ffdb004300080606070605080707070909080a0c140d0c0b0b0c"
    "1912130f141d1a1f1e1d1a1c1c20242e2720222c231c1c2837292c30313434341f27393d38323c2e333432ffc000"
    "0b080001000101011100ffc4001f0000010501010101010100000000000000000102030405060708090a0bffda00"
    "080101000003f00d2cf2bfffd9"
)

WEMO_PRESENTATION = b"""<html><head><title>WeMo Plugin</title></head>
<body><h1>Belkin WeMo</h1><p>Use the WeMo App to control this device.</p></body></html>
"""


def _wemo_root():
    services = []
    for name, path, _, _ in WEMO_SERVICES:
        services.append(
            "<service>\r\n"
            f"<serviceType>urn:Belkin:service:{name}:1</serviceType>\r\n"
            f"<serviceId>urn:Belkin:serviceId:{name}1</serviceId>\r\n"
            f"<controlURL>/upnp/control/{name}1</controlURL>\r\n"
            f"<eventSubURL>/upnp/event/{name}1</eventSubURL>\r\n"
            f"<SCPDURL>{path}</SCPDURL>\r\n"
            "</service>\r\n"
        )
    text = (
        '<?xml version="1.0"?>\r\n'
        '<root xmlns="urn:Belkin:device-1-0">\r\n'
        "  <specVersion>\r\n    <major>1</major>\r\n    <minor>0</minor>\r\n  </specVersion>\r\n"
        "  <device>\r\n"
        "<deviceType>urn:Belkin:device:controllee:1</deviceType>\r\n"
        "<friendlyName>Living Room Lamp</friendlyName>\r\n"
        "    <manufacturer>Belkin International Inc.</manufacturer>\r\n"
        "    <manufacturerURL>http://www.belkin.com</manufacturerURL>\r\n"
        "    <modelDescription>Belkin Plugin Socket 1.0</modelDescription>\r\n"
        "    <modelName>Socket</modelName>\r\n"
        "    <modelNumber>1.0</modelNumber>\r\n"
        "    <hwVersion>v2</hwVersion>\r\n"
        "    <modelURL>http://www.belkin.com/plugin/</modelURL>\r\n"
        "<serialNumber>221517K0101769</serialNumber>\r\n"
        f"<UDN>{WEMO_UUID}</UDN>\r\n"
        "    <UPC>123456789</UPC>\r\n"
        "<macAddress>94103E4B1F2C</macAddress>\r\n"
        "<hkSetupCode>123-45-678</hkSetupCode>\r\n"
        "<firmwareVersion>WeMo_WW_2.00.11408.PVT-OWRT-SNS</firmwareVersion>\r\n"
        "<iconVersion>0|49153</iconVersion>\r\n"
        "<binaryState>0</binaryState>\r\n"
        "    <iconList> \r\n      <icon> \r\n      <mimetype>jpg</mimetype> \r\n"
        "      <width>100</width> \r\n      <height>100</height> \r\n      <depth>100</depth> \r\n"
        "       <url>icon.jpg</url> \r\n      </icon> \r\n    </iconList>\r\n"
        "    <serviceList>\r\n" + "".join(services) + "    </serviceList>\r\n"
        "   <presentationURL>/pluginpres.html</presentationURL>\r\n"
        "</device>\r\n"
        "</root>\r\n"
    )
    return text.encode("utf-8")


def wemo_documents():
    docs = {"/setup.xml": _wemo_root()}
    for _, path, actions, variables in WEMO_SERVICES:
        docs[path] = _scpd(actions, variables)
    docs["/icon.jpg"] = WEMO_ICON
    docs["/pluginpres.html"] = WEMO_PRESENTATION
    return docs


def wemo_bundle():
    snapshot = {
        snapshot_key(f"urn:Belkin:serviceId:{svc}1", var): value
        for svc, values in WEMO_STATE.items()
        for var, value in values.items()
    }
    content_types = {
        "/icon.jpg": "image/jpeg",
        "/pluginpres.html": "text/html",
        **{path: 'text/xml; charset="utf-8"' for path in wemo_documents() if path.endswith(".xml")},
    }
    return assemble(wemo_documents(), "/setup.xml", snapshot=snapshot, server=WEMO_SERVER,
                    content_types=content_types, source_location="http://10.0.0.11:49153/setup.xml",
                    scan_timestamp="2019-09-24T08:00:00Z")


# --- lab device: every data type -------------------------------------------

LAB_UUID = "uuid:0f5c1f7e-6a63-4c55-9d0e-1ab0c0ffee01"
NUMERIC_TYPES = ["i1", "i2", "i4", "ui1", "ui2", "ui4", "r4", "r8"]

LAB_VARIABLES = {
    "numeric": [V(f"Value_{t}", t) for t in NUMERIC_TYPES]
    + [V("Level", "ui1", "50", allowed_range=AllowedRange("0", "100", "5"))],
    "text": [
        V("Label", "string"),
        V("Mode", "string", "Off", allowed_values=["Off", "Eco", "Boost"]),
        V("Enabled", "boolean", "0"),
        V("Endpoint", "uri"),
        V("Blob", "bin.base64", send_events=False),
        V("LastSeen", "dateTime"),
    ],
    "sensor": [
        V("Temperature", "r4", "20.5"),
        V("Humidity", "ui1", allowed_range=AllowedRange("0", "100")),
        V("Secret", "string", send_events=False),
        V("A_ARG_TYPE_String", "string", send_events=False),
    ],
}

LAB_STATE = {
    "numeric": {"Value_i1": "-12", "Value_i2": "-3000", "Value_i4": "123456", "Value_ui1": "200",
                "Value_ui2": "60000", "Value_ui4": "4000000000", "Value_r4": "1.5",
                "Value_r8": "-2.25e10", "Level": "35"},
    "text": {"Label": "bench <rig> & \"co\"", "Mode": "Eco", "Enabled": "1",
             "Endpoint": "http://lab.example/api?x=1&y=2", "Blob": "AAECAwQ=",
             "LastSeen": "2020-02-29T23:59:59"},
    "sensor": {"Temperature": "21.75", "Humidity": "40"},
}


def _lab_services():
    numeric = LAB_VARIABLES["numeric"]
    text = LAB_VARIABLES["text"]
    sensor = LAB_VARIABLES["sensor"]
    return [
        ("numeric", [a for v in numeric for a in (get(v.name), put(v.name))], numeric),
        ("text", [a for v in text for a in (get(v.name), put(v.name))], text),
        ("sensor",
         [get("Temperature"), get("Humidity"),
          # generic argument type: maps to Humidity by name
          ("ReadHumidity", [("Humidity", "out", "A_ARG_TYPE_String")]),
          put("Secret")],
         sensor),
    ]


def lab_documents():
    services = []
    docs = {}
    for name, actions, variables in _lab_services():
        services.append(ServiceRef(
            service_type=f"urn:upot-lab:service:{name}:1",
            service_id=f"urn:upot-lab:serviceId:{name}",
            scpd_url=f"/scpd/{name}.xml",
            control_url=f"/control/{name}",
            event_sub_url=f"/event/{name}",
        ))
        docs[f"/scpd/{name}.xml"] = _scpd(actions, variables)
    root = DeviceDescription(
        device_type="urn:upot-lab:device:TestBench:1",
        friendly_name="Lab Bench",
        manufacturer="UPoT Lab",
        model_name="Bench",
        udn=LAB_UUID,
        serial_number="LAB-0001",
        services=services,
    )
    docs["/device.xml"] = serialize_device_description(root, verbatim=False)
    return docs


def lab_bundle():
    snapshot = {
        snapshot_key(f"urn:upot-lab:serviceId:{svc}", var): value
        for svc, values in LAB_STATE.items()
        for var, value in values.items()
    }
    return assemble(lab_documents(), "/device.xml", snapshot=snapshot, server="Linux/4.9 UPnP/1.0 labd/1.2",
                    scan_timestamp="2024-01-01T00:00:00Z")


# --- media hub: another vendor, embedded device, mixed actions ------------

HUB_UUID = "uuid:4a7d1c3e-8b2f-4e61-a0c9-5d3e2f1b6c70"
TUNER_UUID = "uuid:4a7d1c3e-8b2f-4e61-a0c9-5d3e2f1b6c71"
HUB_SERVER = "SHP, UPnP/1.0, Acme UPnP SDK/1.0"

_RENDERING = (
    [("GetVolume", [("InstanceID", "in", "A_ARG_TYPE_InstanceID"), ("Channel", "in", "A_ARG_TYPE_Channel"),
                    ("CurrentVolume", "out", "Volume")]),
     ("SetVolume", [("InstanceID", "in", "A_ARG_TYPE_InstanceID"), ("Channel", "in", "A_ARG_TYPE_Channel"),
                    ("DesiredVolume", "in", "Volume")]),
     ("GetMute", [("CurrentMute", "out", "Mute")]),
     ("SetMuteAndReport", [("DesiredMute", "in", "Mute"), ("CurrentMute", "out", "Mute")])],
    [V("Volume", "ui2", "10", allowed_range=AllowedRange("0", "100", "1")),
     V("Mute", "boolean", "0"),
     V("A_ARG_TYPE_InstanceID", "ui4", send_events=False),
     V("A_ARG_TYPE_Channel", "string", "Master", allowed_values=["Master", "LF", "RF"], send_events=False)],
)
_CONNECTION = (
    [("GetProtocolInfo", [("Source", "out", "SourceProtocolInfo"), ("Sink", "out", "SinkProtocolInfo")]),
     ("GetCurrentConnectionIDs", [("ConnectionIDs", "out", "CurrentConnectionIDs")])],
    [V("SourceProtocolInfo", "string"), V("SinkProtocolInfo", "string"),
     V("CurrentConnectionIDs", "string", "0")],
)
_AGENT = (
    [("GetSourceList", [("SourceList", "out", "SourceList")]),
     ("SetMainTVSource", [("Source", "in", "A_ARG_TYPE_Source"), ("Result", "out", "A_ARG_TYPE_Result")]),
     ("GetCurrentMainTVChannel", [("Result", "out", "A_ARG_TYPE_Result"),
                                  ("CurrentChannel", "out", "CurrentChannel")]),
     ("SendKey", [("KeyCode", "in", "A_ARG_TYPE_KeyCode")])],
    [V("SourceList", "string"), V("CurrentChannel", "ui2", "1"),
     V("A_ARG_TYPE_Source", "string", "TV", allowed_values=["TV", "HDMI1", "HDMI2", "AV"], send_events=False),
     V("A_ARG_TYPE_Result", "string", "OK", send_events=False),
     V("A_ARG_TYPE_KeyCode", "string", send_events=False)],
)
_TUNER = (
    [("GetSignal", [("Strength", "out", "SignalStrength"), ("Locked", "out", "Locked")]),
     ("Tune", [("Frequency", "in", "Frequency"), ("Locked", "out", "Locked")])],
    [V("SignalStrength", "i2"), V("Locked", "boolean", "0"), V("Frequency", "ui4", "474000")],
)

HUB_STATE = {
    # Volume is only reported by a mixed action, so it keeps its default
    "urn:upnp-org:serviceId:RenderingControl": {"Mute": "1"},
    f"{HUB_UUID}/urn:upnp-org:serviceId:ConnectionManager": {
        "SourceProtocolInfo": "http-get:*:video/mp4:*", "SinkProtocolInfo": "http-get:*:audio/mpeg:*",
        "CurrentConnectionIDs": "0"},
    "urn:acme-av-com:serviceId:MainTVAgent2": {"SourceList": "TV,HDMI1,HDMI2", "CurrentChannel": "7",
                                              "A_ARG_TYPE_Result": "OK"},
    f"{TUNER_UUID}/urn:upnp-org:serviceId:ConnectionManager": {
        "SourceProtocolInfo": "", "SinkProtocolInfo": "dvb-t:*:*:*", "CurrentConnectionIDs": "3"},
    "urn:acme-av-com:serviceId:Tuner": {"SignalStrength": "-47", "Locked": "1"},
}


def mediahub_documents():
    def ref(stype, sid, stem):
        return ServiceRef(service_type=stype, service_id=sid, scpd_url=f"svc/{stem}.xml",
                          control_url=f"/ctl/{stem}", event_sub_url=f"/evt/{stem}")

    tuner = DeviceDescription(
        device_type="urn:acme-av-com:device:Tuner:1",
        friendly_name="Acme Tuner",
        manufacturer="Acme Visual",
        model_name="AT-200",
        udn=TUNER_UUID,
        services=[
            ref("urn:schemas-upnp-org:service:ConnectionManager:1",
                "urn:upnp-org:serviceId:ConnectionManager", "TunerCM"),
            ref("urn:acme-av-com:service:Tuner:1", "urn:acme-av-com:serviceId:Tuner", "Tuner"),
        ],
        presentation_urls=["/tuner/status.html"],
    )
    hub = DeviceDescription(
        device_type="urn:acme-av-com:device:MediaHub:1",
        friendly_name="[TV] Lounge",
        manufacturer="Acme Visual",
        model_name="UE55X9000",
        udn=HUB_UUID,
        serial_number="0A1B2C3D",
        extra={"manufacturerURL": "http://www.acme-av.example", "modelNumber": "AllShare1.0"},
        icons=[Icon("image/png", "48", "48", "24", "/icon/tv48.png")],
        services=[
            ref("urn:schemas-upnp-org:service:RenderingControl:1",
                "urn:upnp-org:serviceId:RenderingControl", "RenderingControl"),
            ref("urn:schemas-upnp-org:service:ConnectionManager:1",
                "urn:upnp-org:serviceId:ConnectionManager", "ConnectionManager"),
            ref("urn:acme-av-com:service:MainTVAgent2:1",
                "urn:acme-av-com:serviceId:MainTVAgent2", "MainTVAgent2"),
        ],
        embedded_devices=[tuner],
        presentation_urls=["/"],
        extensions=['<dlna:X_DLNADOC xmlns:dlna="urn:schemas-dlna-org:device-1-0">DMR-1.50</dlna:X_DLNADOC>'],
    )
    docs = {"/dmr/description.xml": serialize_device_description(hub, verbatim=False)}
    for stem, (actions, variables) in {
        "RenderingControl": _RENDERING, "ConnectionManager": _CONNECTION,
        "TunerCM": _CONNECTION, "MainTVAgent2": _AGENT, "Tuner": _TUNER,
    }.items():
        docs[f"/dmr/svc/{stem}.xml"] = _scpd(actions, variables)
    docs["/icon/tv48.png"] = (
        b"\x89PNG\r\n\x1a\n\x00\x00\x00\rIHDR\x00\x00\x000\x00\x00\x000\x08\x02\x00\x00\x00"
        b"\xd8`n\xd0\x00\x00\x00\x00IEND\xaeB`\x82"
    )
    docs["/"] = b"<html><body>Acme MediaHub remote control</body></html>\n"
    docs["/tuner/status.html"] = b"<html><body>locked</body></html>\n"
    return docs


def mediahub_bundle():
    snapshot = {
        snapshot_key(svc, var): value for svc, values in HUB_STATE.items() for var, value in values.items()
    }
    content_types = {"/": "text/html; charset=utf-8", "/tuner/status.html": "text/html"}
    return assemble(mediahub_documents(), "/dmr/description.xml", snapshot=snapshot, server=HUB_SERVER,
                    content_types=content_types, scan_timestamp="2024-03-01T12:00:00Z")


SAMPLES = {"wemo": wemo_bundle, "lab": lab_bundle, "mediahub": mediahub_bundle}


def sample_bundle(name):
    try:
        return SAMPLES[name]()
    except KeyError:
        raise KeyError(f"unknown sample {name!r}; choose from {sorted(SAMPLES)}") from None
